"""One-command verification: gradient oracles, sampler statistics, invariants
and the end-to-end toy experiments.

Each check returns a :class:`CheckResult`; :func:`run_checks` times them and
never raises on a failing check (an exception inside a check is reported as
a failure).  The quick suite runs in well under a minute; the ``full`` suite
adds training and the end-to-end runs (several minutes).
"""

import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import reference
from .config import GuidanceConfig, parse_config
from .degradation import DegradationModel, degrade, degrade_adjoint, gaussian_kernel, identity_kernel
from .denoiser import AnalyticGaussian, ConvDenoiser, predict_x0
from .grid import Rng, fft2, ifft2
from .guidance import (THROUGH_DENOISER, X0_DETACHED, GuidancePolicy, adjust_noise,
                       guidance_grad_xt, make_data_fidelity_term, make_identity_term,
                       noise_to_score, score_to_noise)
from .metrics import ssim
from .perceptual import FeatureExtractor, SoftSegmenter, perceptual_loss, perceptual_loss_grad
from .sampler import SamplerConfig, ddim_step, guided_sample
from .schedule import build_schedule, forward_diffuse
from .spectral import normalize_spectrum, visual_loss, visual_loss_grad


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""
    seconds: float = 0.0
    data: dict = field(default_factory=dict)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<40s} {self.seconds:7.2f}s  {self.detail}"


@dataclass
class Check:
    name: str
    fn: Callable[[], CheckResult]
    slow: bool = False


def run_checks(checks):
    results = []
    for chk in checks:
        t0 = time.perf_counter()
        try:
            res = chk.fn()
            res.name = chk.name
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(chk.name, False, f"raised {type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results


# -- finite differences --------------------------------------------------------

def central_difference(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(g, ref):
    return float(np.linalg.norm(g - ref) / max(np.linalg.norm(ref), 1e-300))


def fd_check(instances, tol=1e-4, h=1e-5):
    """``instances`` yields ``(f, grad, x)``; passes when every relative error < tol."""
    errs = [rel_error(np.asarray(grad), central_difference(f, x, h)) for f, grad, x in instances]
    worst = max(errs)
    return CheckResult("", worst < tol, f"n={len(errs)} max rel err {worst:.2e} (tol {tol:g})",
                       data={"max_rel_err": worst, "n": len(errs)})


def _pairs(seed, n, shape=(8, 8), low=0.05, high=0.95):
    rng = Rng(seed)
    return [(rng.uniform(shape, low, high), rng.uniform(shape, low, high)) for _ in range(n)]


def visual_instances(n=20, seed=11, grad=visual_loss_grad):
    for hr, sr in _pairs(seed, n):
        yield (lambda x, hr=hr: visual_loss(hr, x)), grad(hr, sr), sr


def perceptual_instances(n=20, seed=12, grad=perceptual_loss_grad):
    fe, seg = FeatureExtractor.from_seed(0), SoftSegmenter()
    for hr, sr in _pairs(seed, n):
        yield (lambda x, hr=hr: perceptual_loss(hr, x, fe, seg)), grad(hr, sr, fe, seg), sr


def data_fidelity_instances(n=20, seed=13):
    rng = Rng(seed)
    dm = DegradationModel(2, gaussian_kernel(5, 1.0))
    for _ in range(n):
        lr = rng.uniform((4, 4))
        x = rng.uniform((8, 8))
        term = make_data_fidelity_term(lr, dm, 1.0)
        yield term.loss, term.gradient(x), x


def _conv_model(rng):
    m = ConvDenoiser.init(rng, channels=4, depth=3, temb_dim=8, prior_var=0.5)
    # move away from the initialization so every path carries signal
    m.params["prior_weight"] = np.array([0.4])
    m.params["w2"] = m.params["w2"] * 10.0
    for k in m.params:
        if k.startswith("b") or k == "temb_b":
            m.params[k] = 0.1 * rng.normal(m.params[k].shape)
    return m


def guidance_instances(backend, mode, n=20, seed=14):
    sched = build_schedule()
    rng = Rng(seed + (0 if backend == "analytic" else 100) + (0 if mode == THROUGH_DENOISER else 7))
    policy = GuidancePolicy(jacobian_mode=mode, clip=None)
    for _ in range(n):
        t = int(rng.integers(20, 900))
        cond = None
        if backend == "analytic":
            model = AnalyticGaussian(rng.uniform((8, 8), -1, 1), float(rng.uniform((), 0.1, 1.0)))
        else:
            model = _conv_model(rng)
            cond = rng.uniform((8, 8))
        term = make_identity_term(rng.uniform((8, 8)), 1.0)
        x = rng.normal((8, 8))
        eps = model.predict_eps(x, t, sched, cond=cond)
        g = guidance_grad_xt(term, x, eps, t, model, policy, sched, cond)
        if mode == THROUGH_DENOISER:
            def f(z, model=model, t=t, cond=cond, term=term):
                return term.loss(predict_x0(z, model.predict_eps(z, t, sched, cond=cond), t, sched))
        else:
            def f(z, eps=eps, t=t, term=term):
                return term.loss(predict_x0(z, eps, t, sched))
        yield f, g, x


def check_grad(kind, **kw):
    makers = {"visual": visual_instances, "perceptual": perceptual_instances,
              "data_fidelity": data_fidelity_instances}
    return lambda: fd_check(list(makers[kind](**kw)))


def check_guidance_grad(backend, mode):
    return lambda: fd_check(list(guidance_instances(backend, mode)))


# -- analytic sampler ------------------------------------------------------------

def check_analytic_sampler(chains=1000, steps=100, seed=0):
    """Unguided deterministic DDIM against the Gaussian-score oracle.

    The gated statistics use moment-matched initial noise: antithetic
    pairs ``(z, -z)`` rescaled so every pixel has sample variance exactly 1.
    For this oracle the sampler is a pixelwise affine map of the initial
    noise, so the gated mean and per-pixel variance measure the sampler's
    own bias rather than Monte Carlo error.  Plain iid chains are reported
    alongside as diagnostics.
    """
    sched = build_schedule()
    rng = Rng(seed)
    ok, parts, data = True, [], {}
    for s2 in (0.0, 0.25, 1.0):
        mu = rng.uniform((8, 8), -1, 1)
        model = AnalyticGaussian(mu, s2)
        cfg = SamplerConfig(num_steps=steps, eta=0.0, clip_output=None)
        half = rng.normal((chains // 2, 8, 8))
        half *= np.sqrt((chains - 1) / (2.0 * np.sum(half * half, axis=0)))
        x, _ = guided_sample(model, sched, cfg, noise=np.concatenate([half, -half]))
        iid, _ = guided_sample(model, sched, cfg, noise=rng.normal((chains, 8, 8)))
        if s2 == 0.0:
            mse = float(np.mean((x - mu) ** 2))
            good = mse < 1e-3
            parts.append(f"s2=0: mse {mse:.1e}")
            data["s2=0"] = {"mse": mse}
        else:
            dev = float(np.abs(x.mean(0) - mu).max())
            pix_mm = x.var(0, ddof=1) / s2
            worst = float(np.abs(pix_mm - 1).max())
            ratio = float(pix_mm.mean())
            good = dev < 0.05 and worst < 0.15
            se = math.sqrt(s2 / chains)
            z_iid = float(np.abs(iid.mean(0) - mu).max() / se)
            pix = iid.var(0, ddof=1) / s2
            parts.append(f"s2={s2}: |mean-mu|max {dev:.1e} pixel var ratio {pix_mm.min():.3f}..{pix_mm.max():.3f}"
                         f" [iid: max z {z_iid:.2f}, pixel var ratio {pix.min():.2f}..{pix.max():.2f}]")
            data[f"s2={s2}"] = {"mean_dev": dev, "var_ratio": ratio, "max_pixel_var_dev": worst, "iid_max_z": z_iid,
                                "iid_pixel_ratio_min": float(pix.min()),
                                "iid_pixel_ratio_max": float(pix.max())}
        ok &= good
    return CheckResult("", ok, "; ".join(parts), data=data)


# -- guidance efficacy ------------------------------------------------------------

RHO_SWEEP = (0.1, 0.3, 1.0, 3.0, 10.0)


def check_guidance_efficacy(chains=200, steps=50, sigma2=0.25):
    """Identity guidance toward a fixed target on the analytic oracle.

    rho is chosen on tuning chains (seed 1) and the ratio is then measured
    on fresh chains (seed 2).
    """
    sched = build_schedule()
    rng = Rng(5)
    mu = rng.uniform((8, 8), -1, 1)
    target = rng.uniform((8, 8), -1, 1)
    model = AnalyticGaussian(mu, sigma2)

    def mse_ratio(rho, seed):
        base = SamplerConfig(num_steps=steps, seed=seed, clip_output=None)
        x0, _ = guided_sample(model, sched, base, shape=(chains, 8, 8))
        guided = SamplerConfig(num_steps=steps, seed=seed, clip_output=None,
                               terms=[make_identity_term(target, rho)])
        x1, _ = guided_sample(model, sched, guided, shape=(chains, 8, 8))
        return float(np.mean((x1 - target) ** 2) / np.mean((x0 - target) ** 2))

    sweep = {rho: mse_ratio(rho, 1) for rho in RHO_SWEEP}
    best = min(sweep, key=sweep.get)
    ratio = mse_ratio(best, 2)
    sweep_txt = ", ".join(f"{r:g}:{v:.3f}" for r, v in sweep.items())
    return CheckResult("", ratio <= 0.5, f"selected rho {best:g}, held-out MSE ratio {ratio:.3f} (sweep {sweep_txt})",
                       data={"selected_rho": best, "ratio": ratio, "sweep": sweep})


# -- spectral invariants ------------------------------------------------------------

def check_spectral_invariants():
    rng = Rng(21)
    worst_shift = 0.0
    for _ in range(3):
        x = rng.uniform((16, 16))
        for dy in range(16):
            for dx in range(16):
                worst_shift = max(worst_shift, visual_loss(x, np.roll(x, (dy, dx), axis=(0, 1))))
    worst_parseval, worst_norm = 0.0, 0.0
    for _ in range(10):
        x = rng.normal((16, 16))
        F = fft2(x)
        p = abs(np.sum(np.abs(F) ** 2) / x.size - np.sum(x * x)) / np.sum(x * x)
        worst_parseval = max(worst_parseval, p)
        worst_parseval = max(worst_parseval, float(np.abs(ifft2(F) - x).max()))
        n = normalize_spectrum(rng.uniform((16, 16)) * 3.0)
        worst_norm = max(worst_norm, abs(n.mean()), abs(n.std() - 1.0))
    const = np.full((16, 16), 0.4)
    hr = rng.uniform((16, 16))
    lc, gc = visual_loss(hr, const), visual_loss_grad(hr, const)
    n0 = normalize_spectrum(np.full((8, 8), 2.0))
    finite = bool(np.isfinite(lc) and np.all(np.isfinite(gc)) and np.all(n0 == 0))
    ok = worst_shift < 1e-12 and worst_parseval < 1e-9 and worst_norm < 1e-6 and finite
    return CheckResult("", ok, f"shift {worst_shift:.1e}, parseval {worst_parseval:.1e}, "
                               f"normalize {worst_norm:.1e}, constant-image finite {finite}")


# -- algebraic identities --------------------------------------------------------------

def check_algebraic_identities(tol=1e-12):
    sched = build_schedule()
    rng = Rng(31)
    errs = {}
    x0 = rng.uniform((64, 8, 8))
    t = rng.integers(1, sched.T + 1, 64)
    e = rng.normal((64, 8, 8))
    xt = forward_diffuse(x0, t, e, sched)
    errs["x0 round trip"] = max(float(np.abs(predict_x0(xt[i], e[i], int(t[i]), sched) - x0[i]).max())
                                for i in range(64))
    errs["score/noise round trip"] = max(
        float(np.abs(score_to_noise(noise_to_score(e[i], int(t[i]), sched), int(t[i]), sched) - e[i]).max())
        for i in range(64))
    # one step straight to t = 0 returns the point-mass location
    mu = rng.uniform((8, 8))
    point = AnalyticGaussian(mu, 0.0)
    worst = 0.0
    for tt in (1, 10, 500, 1000):
        x = rng.normal((8, 8))
        worst = max(worst, float(np.abs(ddim_step(x, point.predict_eps(x, tt, sched), tt, 0, 0.0, None, sched) - mu).max()))
    errs["terminal collapse"] = worst
    # rho = 0 is a bitwise no-op, both in adjust_noise and in a full run
    model = AnalyticGaussian(mu, 0.3)
    plain, _ = guided_sample(model, sched, SamplerConfig(num_steps=20, seed=4), shape=(3, 8, 8))
    zero, _ = guided_sample(model, sched, SamplerConfig(num_steps=20, seed=4,
                                                        terms=[make_identity_term(mu, 0.0)]), shape=(3, 8, 8))
    g = rng.normal((8, 8))
    bitwise = np.array_equal(plain, zero) and np.array_equal(adjust_noise(e[0], [(0.0, g)], 100, sched), e[0])
    errs["rho=0 bitwise"] = 0.0 if bitwise else float("inf")
    g1, g2 = rng.normal((8, 8)), rng.normal((8, 8))
    base = e[0]
    d1 = adjust_noise(base, [(0.7, g1)], 300, sched) - base
    d2 = adjust_noise(base, [(1.9, g2)], 300, sched) - base
    d12 = adjust_noise(base, [(0.7, g1), (1.9, g2)], 300, sched) - base
    d_scaled = adjust_noise(base, [(1.4, g1)], 300, sched) - base
    errs["adjust_noise linearity"] = max(float(np.abs(d12 - d1 - d2).max()),
                                         float(np.abs(d_scaled - 2 * d1).max()))
    ok = all(v < tol for v in errs.values())
    return CheckResult("", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()), data=errs)


# -- dual implementations -----------------------------------------------------------

def check_dual_oracles(tol=1e-10):
    rng = Rng(41)
    fe = FeatureExtractor.from_seed(0)
    seg = SoftSegmenter()
    w = [wl.tolist() for wl in fe.weights]
    errs = {"visual": 0.0, "perceptual": 0.0, "ssim": 0.0}
    for _ in range(3):
        hr, sr = rng.uniform((8, 8)), rng.uniform((8, 8))
        lib = visual_loss(hr, sr)
        errs["visual"] = max(errs["visual"], abs(lib - reference.visual_loss(hr.tolist(), sr.tolist())) / abs(lib))
        lib = perceptual_loss(hr, sr, fe, seg)
        ref = reference.perceptual_loss(hr.tolist(), sr.tolist(), w, seg.centers.tolist(), seg.temperature)
        errs["perceptual"] = max(errs["perceptual"], abs(lib - ref) / abs(lib))
        a, b = rng.uniform((12, 12)), rng.uniform((12, 12))
        b = 0.5 * a + 0.5 * b
        errs["ssim"] = max(errs["ssim"], abs(ssim(a, b) - reference.ssim(a.tolist(), b.tolist())))
    ok = all(v < tol for v in errs.values())
    return CheckResult("", ok, ", ".join(f"{k} {v:.1e}" for k, v in errs.items()), data=errs)


# -- adjoint -------------------------------------------------------------------------

ADJOINT_CASES = (
    ("gauss5/x4", DegradationModel(4, gaussian_kernel(5, 1.0)), (16, 16)),
    ("gauss3/x2", DegradationModel(2, gaussian_kernel(3, 0.7)), (12, 10)),
    ("identity/x3", DegradationModel(3, identity_kernel()), (9, 15)),
)


def check_adjoint(pairs=50, tol=1e-10):
    rng = Rng(51)
    worst = 0.0
    for _, dm, shape in ADJOINT_CASES:
        for _ in range(pairs):
            x = rng.normal(shape)
            y = rng.normal(dm.lr_shape(shape))
            lhs = float(np.sum(degrade(x, dm) * y))
            rhs = float(np.sum(x * degrade_adjoint(y, dm, shape)))
            worst = max(worst, abs(lhs - rhs))
    return CheckResult("", worst < tol, f"{len(ADJOINT_CASES)}x{pairs} pairs, max |<Ax,y>-<x,A*y>| {worst:.1e}")


# -- end to end -------------------------------------------------------------------------

TOY_CONFIGS = (("visual",), ("perceptual",), ("visual", "perceptual"),
               ("visual", "perceptual", "data_fidelity"))


def toy_config(output_dir, seed=0, **overrides):
    """The toy super-resolution experiment (16 held-out 64x64 images, x4)."""
    from .experiments import DEFAULT_RHO
    data = {"seed": seed, "output_dir": output_dir,
            "guidance": [{"type": k, "rho": DEFAULT_RHO[k]} for k in ("visual", "perceptual", "data_fidelity")]}
    data.update(overrides)
    return parse_config(data)


def _specs(cfg, kinds):
    return [g for g in cfg.guidance if g.type in kinds]


def check_toy_sr(workdir, seed=0):
    from . import experiments as E
    t0 = time.perf_counter()
    cfg = toy_config(os.path.join(workdir, "train"), seed)
    ckpt = E.run_train(cfg)["checkpoint"]
    train_s = time.perf_counter() - t0
    rows = {}
    for kinds in ((),) + TOY_CONFIGS:
        c = cfg.model_copy(update={"guidance": _specs(cfg, kinds), "output_dir": os.path.join(workdir, "sr_" + ("_".join(kinds) or "unguided"))})
        res = E.run_sr(c, ckpt)
        for r in res["rows"]:
            if r["image"] == "mean":
                rows[r["method"]] = r
    bic = rows["bicubic"]["psnr"]
    guided = {k: v for k, v in rows.items() if k not in ("bicubic", "unguided")}
    a = {k: v["psnr"] >= bic for k, v in guided.items()}
    b = rows["visual+perceptual+data_fidelity"]["psnr"] >= rows["unguided"]["psnr"]
    c = rows["visual"]["visual_loss"] < rows["unguided"]["visual_loss"]
    total = time.perf_counter() - t0
    ok = all(a.values()) and b and c and total < 20 * 60
    detail = (f"bicubic {bic:.3f} dB, unguided {rows['unguided']['psnr']:.3f}; "
              + ", ".join(f"{k} {v['psnr']:.3f}" for k, v in guided.items())
              + f"; (a) {'ok' if all(a.values()) else 'below bicubic: ' + ','.join(k for k, v in a.items() if not v)}"
              + f" (b) {b} (c) visual loss {rows['visual']['visual_loss']:.4f} vs {rows['unguided']['visual_loss']:.4f}"
              + f"; train {train_s:.0f}s total {total:.0f}s")
    return CheckResult("", ok, detail, data={"rows": rows, "a": a, "b": b, "c": c,
                                             "checkpoint": ckpt, "seconds": total})


def check_ablation(workdir, checkpoint=None, seed=0):
    from . import experiments as E
    cfg = toy_config(os.path.join(workdir, "ablation"), seed)
    res = E.run_ablation(cfg, checkpoint)
    rows = res["rows"]
    cells = [r["cell"] for r in rows]
    ok = cells == E.ABLATION_CELLS and len({r["seed"] for r in rows}) == 1
    by = {r["cell"]: r["psnr"] for r in rows}
    detail = (", ".join(f"{k} {v:.3f}" for k, v in by.items())
              + f"; grad_in_noise >= loss_in_training: {res['outcome']['grad_in_noise_ge_loss_in_training']}"
              + f"; both >= none: {res['outcome']['both_ge_none']}")
    return CheckResult("", ok, detail, data=res)


def check_determinism(workdir, seed=0):
    from . import experiments as E
    small = dict(train={"iterations": 100, "crop": 16}, dataset={"n_train": 8, "n_test": 4, "size": 32},
                 sampler={"num_steps": 20})
    digests = []
    for run in ("a", "b"):
        cfg = toy_config(os.path.join(workdir, "det_" + run), seed, **small)
        tr = E.run_train(cfg)
        sr = E.run_sr(cfg, tr["checkpoint"])
        files = [tr["checkpoint"], tr["loss_trace"]] + sr["images"]
        digests.append([open(f, "rb").read() for f in files])
    same = digests[0] == digests[1]
    return CheckResult("", same, f"{len(digests[0])} files bitwise identical: {same}")


# -- registry ---------------------------------------------------------------------------

def quick_checks():
    checks = [Check(f"grad.{k}", check_grad(k)) for k in ("visual", "perceptual", "data_fidelity")]
    for backend in ("analytic", "conv"):
        for mode in (THROUGH_DENOISER, X0_DETACHED):
            checks.append(Check(f"grad.guidance.{backend}.{mode}", check_guidance_grad(backend, mode)))
    checks += [
        Check("sampler.analytic", check_analytic_sampler),
        Check("guidance.efficacy", check_guidance_efficacy),
        Check("spectral.invariants", check_spectral_invariants),
        Check("algebra.identities", check_algebraic_identities),
        Check("oracle.dual", check_dual_oracles),
        Check("degradation.adjoint", check_adjoint),
    ]
    return checks


def full_checks(workdir):
    state = {}

    def toy():
        res = check_toy_sr(workdir)
        state["checkpoint"] = res.data.get("checkpoint")
        return res

    return [
        Check("e2e.determinism", lambda: check_determinism(workdir), slow=True),
        Check("e2e.toy_sr", toy, slow=True),
        Check("e2e.ablation", lambda: check_ablation(workdir, state.get("checkpoint")), slow=True),
    ]


def run_verify(full=False, workdir=None):
    """Run the suite; returns the list of results."""
    checks = quick_checks()
    if full:
        workdir = workdir or tempfile.mkdtemp(prefix="irguide-verify-")
        checks += full_checks(workdir)
    return run_checks(checks)
