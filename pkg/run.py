# run.py
import sys

from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from app.cli import cli_main

if __name__ == "__main__":
    sys.exit(cli_main())
