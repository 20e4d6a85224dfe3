#!/usr/bin/env python3

"""
Package: amean

  Adversarial meta-adaptation for blending-target domain adaptation (BTDA):
  a numpy autodiff core, the AMEAN networks and losses, a DEC meta-learner,
  the collaborative adversarial trainer, synthetic blended-target data and
  the negative-transfer metrics.
"""
import logging
from pathlib import Path


APP_NAME = "amean"
CLONE = Path(__file__).parent.parent.parent.name
CLI_EPILOG = f"\nExample configurations: {CLONE}/tool_param/contents.txt\n"

logging.basicConfig(
    level=logging.INFO,
    format="[%(levelname)s]: %(name)s:\n\t%(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
