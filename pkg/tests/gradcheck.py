"""Central finite differences and the relative-error measure shared by gradient tests."""

import numpy as np

STEP = 1e-4


def numeric_grad(f, params: dict, name: str, step: float = STEP) -> np.ndarray:
    p = params[name]
    out = np.zeros_like(p)
    flat, gflat = p.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = f()
        flat[i] = keep - step
        down = f()
        flat[i] = keep
        gflat[i] = (up - down) / (2 * step)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a|| + ||b||, 1e-12)."""
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def max_relative_error(f, params: dict, analytic: dict, names=None) -> float:
    names = names or list(analytic)
    return max(relative_error(analytic[n], numeric_grad(f, params, n)) for n in names)


def cnn_fixture(margin: float = 5e-4):
    """Tiny CNN config, params and 16x16 input whose rectifier inputs all sit at
    least ``margin`` away from zero, so a 1e-4 step never crosses a kink."""
    from bctx.embed.densecnn import DenseCnnConfig, forward, init_params

    cfg = DenseCnnConfig(input_side=16, stem_channels=4, blocks=2, layers_per_block=2, growth_rate=2)
    for seed in range(1000):
        params = init_params(cfg, seed)
        rng = np.random.default_rng(seed)
        for k in params:
            if k.endswith(".b"):
                params[k] = rng.uniform(-0.05, 0.05, size=params[k].shape)
        x = rng.random((1, 3, 16, 16))
        _, cache = forward(x, params, cfg, keep_cache=True)
        pres = [cache["stem"][2]] + [layer[2] for b in range(cfg.blocks) for layer in cache[f"block{b}"][1]]
        if min(np.abs(p).min() for p in pres) > margin:
            return cfg, params, x, rng.standard_normal(cfg.embedding_dim)
    raise RuntimeError("no kink-free fixture found")


def _pre_activations(model, inputs):
    from bctx import fusion

    _, cache = fusion._forward(model, inputs)
    pres = [v for k, v in cache.items() if k.startswith(("proj.", "hidden."))]
    if "cnn" in cache:
        c = cache["cnn"]
        pres += [c["stem"][2]] + [layer[2] for b in range(model.embedder_config.blocks) for layer in c[f"block{b}"][1]]
    return pres


def mlp_fixture(margin: float = 1e-3, with_cnn: bool = False, n: int = 5):
    """Tiny fusion model (all dims <= 6) with random biases and a batch whose
    rectifier inputs all clear ``margin``."""
    from bctx import fusion
    from bctx.embed.densecnn import DenseCnnConfig

    emb = DenseCnnConfig(input_side=8, stem_channels=2, blocks=1, layers_per_block=2, growth_rate=2) if with_cnn else None
    dims = {"bin": 6, "cxt": 5, "lib": 3}
    labels = ("a", "b", "c")
    config = fusion.TrainConfig(hidden_layers=2, hidden_width=6, d_common=4, batch_size=8, epochs=1)
    for seed in range(1000):
        model = fusion.init_model(dims, labels, fusion.TrainConfig(**{**fusion.config_dict(config), "seed": seed,
                                                                      "views": ("bin", "cxt", "lib")}), emb)
        rng = np.random.default_rng(seed)
        for k, v in model.params.items():
            if k.endswith(".b"):
                model.params[k] = rng.uniform(-0.3, 0.3, size=v.shape)
        inputs = {
            "bin": rng.random((n, 3, 8, 8)) if with_cnn else rng.standard_normal((n, 6)),
            "cxt": rng.integers(0, 2, (n, 5)).astype(float),
            "lib": rng.integers(0, 50, (n, 3)).astype(float),
        }
        y = rng.integers(0, 3, n)
        if min(np.abs(p).min() for p in _pre_activations(model, inputs)) > margin:
            return model, inputs, y
    raise RuntimeError("no kink-free fixture found")
