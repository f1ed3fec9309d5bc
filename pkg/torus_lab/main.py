"""This is the main entry point for the torus_lab package."""

from torus_lab.cli.cli import main

if __name__ == '__main__':
    main()
