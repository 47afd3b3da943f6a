#!/usr/bin/env python
"""
Script to run the TMER pipeline from the command line.
"""
from src.cli import main

if __name__ == "__main__":
    main()
