"""Performance estimation, inexact gradient descent certificates and an entropic interior-point method."""
