# -*- coding: utf-8 -*-
"""Channel-relation attention over feature pyramids."""

from opnet.attention import (
    OpConfig,
    ca_forward,
    op_multihead_forward,
)
from opnet.pyramid import (
    FeaturePyramid,
    opnet_feature_path,
)

__author__ = 'opnet developers'
__version__ = '0.1.0'
