from dotenv import load_dotenv
load_dotenv()

from querysynth.api.cli import app

if __name__ == "__main__":
    app()
