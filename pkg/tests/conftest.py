import sys
from pathlib import Path

# make fixtures.py and cross-test imports resolvable regardless of rootdir
sys.path.insert(0, str(Path(__file__).parent))
