#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
AnyTSR - сверхразрешение тепловизионных изображений с произвольным масштабом
"""

__version__ = "1.0.0"
