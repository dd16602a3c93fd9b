"""Entry point for the GhostRNN kit.

Loads a ``.env`` file (GHOSTRNN_THREADS, GHOSTRNN_LOG_LEVEL) before
handing the command line to ``ghostrnn.cli``.

Usage:
    python main.py count --cell ghost --feature-dim 10 --state-dim 100 --ratio 2
    python main.py train --task adding --cell ghost --state-dim 32 --ratio 2 --seed 1 --epochs 20
"""

import sys

from dotenv import load_dotenv


# Load environment variables
load_dotenv()


from ghostrnn.cli import main  # noqa: E402


if __name__ == "__main__":
    sys.exit(main())
