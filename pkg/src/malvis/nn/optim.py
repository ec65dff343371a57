import numpy as np


def sgd_momentum_update(params, grads, lr, momentum, velocity=None):
    """In-place heavy-ball step: v <- momentum * v + g; p <- p - lr * v.

    ``params`` and ``grads`` are dicts keyed by parameter name. Returns the
    velocity dict (created with zeros on the first call).
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    if not 0.0 <= momentum < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    if velocity is None:
        velocity = {}
    for name, p in params.items():
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(p)
        v *= momentum
        v += grads[name]
        p -= lr * v
    return velocity
