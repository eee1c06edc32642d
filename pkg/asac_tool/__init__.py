"""
    The base package module
"""

import os

BYTES_IN_MB = 1024 * 1024
OUTPUT_DIR_ENV_VAR = "ASAC_TOOL_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = os.path.join(os.getcwd(), "output")

# Selector probabilities are kept inside [PROB_EPS, 1 - PROB_EPS].
PROB_EPS = 1e-6
SENTINEL = 0.0

__version__ = "0.1.0"
__author__ = "Luc Shelton <lucshelton@gmail.com>"
__title__ = "asac-tool"
__project__ = "asac_tool"
__license__ = "MIT"
