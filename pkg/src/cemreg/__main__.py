from cemreg.cli import entry

entry()
