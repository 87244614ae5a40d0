import numpy as np

from fewshot_dml.layers import LayerSpec, init_params


def make_net(dims, activations, seed=0, slope=0.2):
    """Build a ParamBundle from a dim chain like [4, 8, 3] plus activations."""
    specs = [LayerSpec(dims[i], dims[i + 1], activations[i], slope)
             for i in range(len(dims) - 1)]
    return init_params(specs, seed)


def randomize(bundle, seed, scale=0.5):
    """Replace a bundle's parameters with Gaussian noise (biases included)."""
    rng = np.random.default_rng(seed)
    for w in bundle.weights:
        w[...] = scale * rng.normal(size=w.shape)
    for b in bundle.biases:
        b[...] = scale * rng.normal(size=b.shape)
    return bundle
