import sys

from aniso_ac.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", *sys.argv[1:]]))
