"""Sickle-cell severity grading from Percoll gradient images.

Two-step pipeline: a regression CNN estimates hypo-/hyperchromic cell
percentages from the image, and a spectral GCN over a population graph
(edges from the estimated percentages and spleen size) grades severity.
"""

__version__ = "0.1.0"
