"""Central finite-difference gradient checking.

The numeric side re-evaluates the forward function at perturbed inputs and
never touches the analytic backward pass, so the two routes stay independent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import RngState, Tensor, backward, zero_grads


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    tolerance: float
    probes: int

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def check_gradients(fn, params: list[Tensor], h: float = 1e-5, tol: float = 1e-4,
                    atol: float = 1e-8, max_probes_per_param: int = 40,
                    rng: RngState | None = None, name: str = "fn") -> GradCheckResult:
    """Compare analytic gradients of a scalar-valued fn() against central differences.

    fn rebuilds its graph on every call and must be deterministic between
    calls (reseed any internal randomness inside fn). For parameters larger
    than max_probes_per_param, a random coordinate subset is probed.

    A coordinate passes when the symmetric relative error is below tol, or
    when |analytic - numeric| < atol. The absolute floor covers coordinates
    whose true gradient is exactly zero (dead ReLU paths), where the
    difference quotient returns bare float64 roundoff (about 1e-11 at
    h=1e-5) and a pure relative test would compare noise against zero.
    """
    rng = rng or RngState(0)
    zero_grads(params)
    loss = fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    probes = 0
    for p, ga in zip(params, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_probes_per_param:
            coords = np.arange(n)
        else:
            coords = rng.generator.choice(n, size=max_probes_per_param, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            f_plus = fn().item()
            flat[c] = orig - h
            f_minus = fn().item()
            flat[c] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            a = ga.reshape(-1)[c]
            if abs(a - numeric) >= atol:
                rel = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
                worst = max(worst, rel)
            probes += 1
    zero_grads(params)
    return GradCheckResult(name=name, max_rel_err=worst, tolerance=tol, probes=probes)


def layer_suite(variant: str, d: int = 16, n_heads: int = 4, seed: int = 0,
                max_probes: int = 4) -> list[GradCheckResult]:
    """Finite-difference checks through every composed layer of one variant:
    the pair-embedding and query generators, a head, the multihead combiner,
    the encoder block, and the full model driven through its loss."""
    from . import ortho
    from .backbone import BackboneSpec, tokenize
    from .model import ScopeModel
    from .ortho import OAConfig, OAEncoderState, OAHeadParams

    cfg = OAConfig(d=d, n_heads=n_heads, variant=variant)
    rng = np.random.default_rng(seed)
    c = Tensor(rng.normal(size=(4, d)), requires_grad=True)
    q = Tensor(rng.normal(size=(2, d)), requires_grad=True)
    results = []

    def run(name, fn, params):
        results.append(check_gradients(fn, params, max_probes_per_param=max_probes,
                                       name=name))

    head = OAHeadParams.init(cfg, RngState(seed), 0.3)
    ortho.randomize_biases(head.named("h"), RngState(seed + 1))
    alpha_params = list(head.alpha_k.named("a").values())
    beta_params = list(head.beta.named("b").values())
    run(f"alpha[{variant}]",
        lambda: ortho._alpha(c, q, head.alpha_k, cfg).sum(), [c, q] + alpha_params)
    run(f"beta[{variant}]",
        lambda: ortho._beta(c, q, head.beta, cfg).sum(), [c, q] + beta_params)
    run(f"oa_head[{variant}]",
        lambda: ortho.oa_head(c, q, head, cfg).sum(),
        [c, q] + list(head.named("h").values()))

    state = OAEncoderState.init(cfg, RngState(seed + 2), 0.3)
    ortho.randomize_biases(state.named("s"), RngState(seed + 3))
    run(f"oa_multihead[{variant}]",
        lambda: ortho.oa_multihead(c, q, state, cfg).sum(),
        [c, q] + list(state.heads[0].named("h0").values()) + [state.w_d])
    run(f"oa_encoder_block[{variant}]",
        lambda: ortho.oa_encoder_block(c, q, state, cfg).sum(),
        [c, q] + list(state.named("s").values()))

    spec = BackboneSpec(kind="toy_encoder", d=d, vocab_size=64, n_layers=1,
                        n_heads=n_heads, max_len=16)
    model = ScopeModel.init(cfg, spec, seed=seed)
    ortho.randomize_biases(model.named_parameters(), RngState(seed + 4))
    model.classifier_w.data[:] = rng.normal(0, 0.1, size=model.classifier_w.shape)
    seq = tokenize(["one", "not", "two", "three", "four", "five"], [1], 64)
    labels = np.array([0, 0, 1, 1, 1, 0])
    run(f"model[{variant}]",
        lambda: model.loss(model.forward(seq, training=False), labels),
        list(model.named_parameters().values()))
    return results
