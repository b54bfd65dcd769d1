"""accd: adaptive coordination detection toolkit.

Three-stage pipeline over user activity series: cross-map causal influence
scoring with memory-guided embedding parameters, label-efficient behavioral
classification, and experience-driven causal validation.
"""

__version__ = "0.1.0"
