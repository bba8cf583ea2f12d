import os
import sys

# Make the sibling oracle/helper modules importable regardless of how
# pytest was invoked.
sys.path.insert(0, os.path.dirname(__file__))
