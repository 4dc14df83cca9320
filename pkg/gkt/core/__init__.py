"""Autodiff tensors, attention layers and the operator models built on them."""
