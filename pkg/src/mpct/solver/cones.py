"""Euclidean projection onto the second-order cone."""
import numpy as np


def project_soc(s, t):
    """Project ``(s, t)`` onto ``{(s, t) : ||s||_2 <= t}``."""
    s = np.asarray(s, dtype=float)
    t = float(t)
    ns = float(np.linalg.norm(s))
    if ns <= t:
        return s.copy(), t
    if ns <= -t:
        return np.zeros_like(s), 0.0
    a = 0.5 * (t + ns)
    return a * s / ns, a
