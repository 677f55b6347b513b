"""Experiment runners behind the command line: train, super-resolve, ablate.

Every runner writes into ``config.output_dir`` (or an explicit ``out``)
and finishes with ``manifest.json``: the config digest, the seed, library
versions and a SHA-256 of each file written.

CSV layouts (UTF-8, header row always present, column order is fixed):

``loss_trace.csv``   ``stage,iteration,loss``
``metrics.csv``      ``method,image,psnr,ssim,visual_loss``; one row per
                     image plus a row with ``image = mean`` per method.
                     ``method`` is ``bicubic``, ``unguided`` or the ``+``-joined
                     guidance types.
``ablation.csv``     ``cell,seed,psnr,ssim,visual_loss,perceptual_loss``;
                     cells ``none, visual, perceptual, both, grad_in_noise,
                     loss_in_training``.
"""

import csv
import hashlib
import json
import logging
import os
import platform
from dataclasses import dataclass

import numpy as np

from . import __version__
from .config import ExperimentConfig, GuidanceConfig, PolicyConfig
from .datasets import synth_thermal_dataset
from .degradation import (DegradationModel, degrade, degrade_adjoint, gaussian_kernel,
                          upsample_bicubic)
from .denoiser import ConvDenoiser, TrainConfig, evaluate_loss, train_denoiser
from .errors import ConfigError, IncompatibleShape, ShapeMismatch
from .files import read_image, write_image
from .grid import Rng
from .guidance import (GuidancePolicy, make_data_fidelity_term, make_perceptual_term,
                       make_visual_term)
from .metrics import psnr, ssim
from .perceptual import FeatureExtractor, SoftSegmenter, perceptual_loss, perceptual_loss_grad
from .sampler import SamplerConfig, guided_sample
from .schedule import build_schedule
from .spectral import SpectralLossConfig, visual_loss, visual_loss_grad

log = logging.getLogger(__name__)

CSV_VERSION = 1
METRICS_COLUMNS = ["method", "image", "psnr", "ssim", "visual_loss"]
ABLATION_COLUMNS = ["cell", "seed", "psnr", "ssim", "visual_loss", "perceptual_loss"]
TRACE_COLUMNS = ["stage", "iteration", "loss"]
ABLATION_CELLS = ["none", "visual", "perceptual", "both", "grad_in_noise", "loss_in_training"]

# guidance strengths used when a runner needs a term the config leaves out
DEFAULT_RHO = {"visual": 300.0, "perceptual": 1e5, "data_fidelity": 1e3}


# -- building blocks ---------------------------------------------------------

@dataclass
class Data:
    hr_train: np.ndarray
    hr_test: np.ndarray


def schedule_from(cfg):
    s = cfg.schedule
    return build_schedule(s.kind, s.T, s.beta_min, s.beta_max)


def degradation_from(cfg):
    d = cfg.degradation
    return DegradationModel(d.scale, gaussian_kernel(d.kernel_size, d.kernel_std), d.noise_std)


def extractor_from(cfg):
    p = cfg.perceptual
    if p.weights_file:
        return FeatureExtractor.load(p.weights_file)
    return FeatureExtractor.from_seed(p.extractor_seed, channels=p.channels, tap=p.tap)


def segmenter_from(cfg):
    return SoftSegmenter(k=cfg.perceptual.classes, temperature=cfg.perceptual.temperature)


def spectral_from(cfg):
    return SpectralLossConfig(eps_log=cfg.spectral.eps_log, eps_std=cfg.spectral.eps_std)


def read_image_dir(path):
    names = sorted(n for n in os.listdir(path) if n.lower().endswith((".pgm", ".png")))
    if not names:
        raise ConfigError(f"no .pgm/.png images in {path}")
    imgs = [read_image(os.path.join(path, n)) for n in names]
    if len({im.shape for im in imgs}) != 1:
        raise ShapeMismatch(f"shape mismatch: images in {path} differ in size")
    return np.stack(imgs)


def load_data(cfg):
    ds = cfg.dataset
    if ds.source == "synthetic":
        r_train, r_test = Rng(cfg.seed).split(2)
        return Data(synth_thermal_dataset(ds.n_train, ds.size, r_train),
                    synth_thermal_dataset(ds.n_test, ds.size, r_test))
    return Data(read_image_dir(ds.train_dir), read_image_dir(ds.test_dir))


def low_res(hr, cfg, stream=0):
    """LR observations; noise (if configured) is drawn from a seed-derived stream."""
    d = degradation_from(cfg)
    rng = Rng(cfg.seed).split(3)[2].split(stream + 1)[stream] if d.noise_std > 0 else None
    return degrade(hr, d, rng)


def condition(lr, cfg):
    return upsample_bicubic(lr, cfg.degradation.scale)


def new_model(cfg, hr, cond):
    m = cfg.model
    prior_var = float(np.mean((hr - cond) ** 2))
    return ConvDenoiser.init(Rng(m.init_seed), channels=m.channels, depth=m.depth,
                             temb_dim=m.temb_dim, activation=m.activation,
                             conditioned=True, prior_var=prior_var)


def check_compatible(model, cfg):
    m = cfg.model
    want = {"channels": m.channels, "depth": m.depth, "temb_dim": m.temb_dim,
            "activation": m.activation, "conditioned": True}
    have = {k: model.arch()[k] for k in want}
    if have != want:
        raise IncompatibleShape(f"incompatible checkpoint: architecture {have} does not match config {want}")


def _policy(p: PolicyConfig):
    return GuidancePolicy(p.t_start, p.t_end, p.clip, p.jacobian_mode)


def guidance_terms(specs, hr_ref, lr, cfg, fe=None, seg=None):
    """Sampling-time terms for ``specs`` (``GuidanceConfig`` entries)."""
    terms = []
    for g in specs:
        pol = _policy(g.policy) if g.policy is not None else None
        if g.type == "data_fidelity":
            term = make_data_fidelity_term(lr, degradation_from(cfg), g.rho, decay=g.decay)
        else:
            if hr_ref is None:
                raise ConfigError(f"{g.type} guidance needs high-resolution references")
            if g.type == "visual":
                term = make_visual_term(hr_ref, g.rho, spectral_from(cfg), decay=g.decay)
            else:
                p = cfg.perceptual
                term = make_perceptual_term(hr_ref, g.rho, fe or extractor_from(cfg),
                                            seg or segmenter_from(cfg),
                                            p.feature_weight, p.mask_weight, decay=g.decay)
        term.policy = pol
        terms.append(term)
    return terms


def sampler_config(cfg, terms, record=False):
    s = cfg.sampler
    return SamplerConfig(num_steps=s.num_steps, eta=s.eta, seed=cfg.seed, terms=terms,
                         policy=_policy(cfg.policy), init=s.init, record=record,
                         start_t=s.start_t)


def method_label(specs):
    live = [g.type for g in specs if g.injection == "grad_in_noise"]
    return "+".join(live) if live else "unguided"


# -- training-time auxiliary losses -------------------------------------------

def training_aux(types, cfg, sched):
    """``aux`` callback adding ``sum_k mean_batch L_k(x0_hat)`` (weight 1 each).

    Losses compare the clean-image estimate implied by the predicted noise
    with the training crop.  Only steps ``t <= train.aux_t_max`` contribute:
    the estimate divides by ``sqrt(abar_t)``, which blows up near ``T``.
    """
    fe, seg, spec = extractor_from(cfg), segmenter_from(cfg), spectral_from(cfg)
    dm = degradation_from(cfg)
    pw = cfg.perceptual
    t_max = cfg.train.aux_t_max

    def aux(pred, t, x_t, x0, idx, origin):
        a = sched.abar_array(t)[:, None, None]
        live = (t <= t_max)[:, None, None].astype(np.float64)
        xhat = (x_t - np.sqrt(1.0 - a) * pred) / np.sqrt(a)
        n = pred.shape[0]
        loss, g = 0.0, np.zeros_like(pred)
        for kind in types:
            if kind == "visual":
                li = visual_loss(x0, xhat, spec)
                gi = visual_loss_grad(x0, xhat, spec)
            elif kind == "perceptual":
                kw = dict(feature_weight=pw.feature_weight, mask_weight=pw.mask_weight)
                li = perceptual_loss(x0, xhat, fe, seg, **kw)
                gi = perceptual_loss_grad(x0, xhat, fe, seg, **kw)
            else:
                r = degrade(x0, dm) - degrade(xhat, dm)
                li = np.sum(r * r, axis=(-2, -1))
                gi = -2.0 * degrade_adjoint(r, dm)
            loss += float(np.sum(np.asarray(li) * live[:, 0, 0])) / n
            g += gi * live
        return loss, -np.sqrt(1.0 - a) / np.sqrt(a) * g / n

    return aux


# -- runners ------------------------------------------------------------------

def _out_dir(cfg, out):
    path = out or cfg.output_dir
    os.makedirs(path, exist_ok=True)
    return path


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out, cfg, command, files, extra=None):
    import pydantic
    import scipy
    manifest = {
        "command": command,
        "config_sha256": cfg.digest(),
        "config": cfg.model_dump(mode="json"),
        "seed": cfg.seed,
        "csv_version": CSV_VERSION,
        "versions": {"irguide": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "pydantic": pydantic.__version__},
        "outputs": {os.path.relpath(f, out): _sha256(f) for f in files},
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(out, "manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _train_cfg(cfg, iterations, lr, seed):
    t = cfg.train
    return TrainConfig(iterations=iterations, batch_size=t.batch_size, lr=lr, momentum=t.momentum,
                       max_grad_norm=t.max_grad_norm, crop=t.crop, seed=seed)


def train_model(cfg, data=None):
    """Base training followed, if the config asks for it, by a fine-tune stage
    with the ``loss_in_training`` guidance losses.  Returns ``(model, traces)``."""
    data = data or load_data(cfg)
    sched = schedule_from(cfg)
    cond = condition(low_res(data.hr_train, cfg), cfg)
    model = new_model(cfg, data.hr_train, cond)
    before = evaluate_loss(model, data.hr_train, cond, sched)
    model, trace = train_denoiser(model, data.hr_train, cond, sched,
                                  _train_cfg(cfg, cfg.train.iterations, cfg.train.lr, cfg.seed))
    traces = {"base": trace}
    evals = {"initial": before, "final": evaluate_loss(model, data.hr_train, cond, sched)}
    in_training = [g.type for g in cfg.guidance if g.injection == "loss_in_training"]
    if in_training and cfg.train.finetune_iterations:
        model, ft = finetune(model, cfg, data, cond, in_training)
        traces["finetune"] = ft
    return model, traces, evals


def finetune(model, cfg, data, cond, aux_types):
    """Fine-tune stage shared by both injection modes (same seed and budget)."""
    sched = schedule_from(cfg)
    aux = training_aux(aux_types, cfg, sched) if aux_types else None
    tc = _train_cfg(cfg, cfg.train.finetune_iterations, cfg.train.finetune_lr, cfg.seed + 1)
    return train_denoiser(model, data.hr_train, cond, sched, tc, aux=aux)


def run_train(cfg: ExperimentConfig, out=None):
    """Train the denoiser; writes ``checkpoint.npz``, ``loss_trace.csv`` and the manifest."""
    out = _out_dir(cfg, out)
    model, traces, evals = train_model(cfg)
    ckpt = os.path.join(out, "checkpoint.npz")
    model.save(ckpt)
    rows = [{"stage": stage, "iteration": i, "loss": float(v)}
            for stage, tr in traces.items() for i, v in enumerate(tr)]
    trace_path = os.path.join(out, "loss_trace.csv")
    _write_csv(trace_path, TRACE_COLUMNS, rows)
    base = traces["base"]
    summary = {"initial_loss": evals["initial"], "final_loss": evals["final"]}
    if len(base):
        k = max(1, min(100, len(base) // 10))
        summary.update(trace_head=float(np.mean(base[:k])), trace_tail=float(np.mean(base[-k:])))
    write_manifest(out, cfg, "train", [ckpt, trace_path], {"training": summary})
    return {"checkpoint": ckpt, "loss_trace": trace_path, "traces": traces, **summary}


def score(hr, sr, spec=None):
    """Per-image ``(psnr, ssim, visual_loss)`` rows."""
    rows = []
    for i in range(len(hr)):
        rows.append((psnr(hr[i], sr[i]), ssim(hr[i], sr[i]),
                     float(visual_loss(hr[i], sr[i], spec or SpectralLossConfig()))))
    return rows


def _metric_rows(method, scores):
    rows = [{"method": method, "image": i, "psnr": float(p), "ssim": float(s), "visual_loss": float(v)}
            for i, (p, s, v) in enumerate(scores)]
    arr = np.array(scores, dtype=np.float64)
    rows.append({"method": method, "image": "mean", "psnr": float(arr[:, 0].mean()),
                 "ssim": float(arr[:, 1].mean()), "visual_loss": float(arr[:, 2].mean())})
    return rows


def super_resolve(model, cfg, lr, hr_ref=None, record=False, specs=None):
    """Guided (or plain) sampling for a stack of LR images; returns ``(sr, trajectory)``."""
    specs = cfg.guidance if specs is None else specs
    live = [g for g in specs if g.injection == "grad_in_noise"]
    terms = guidance_terms(live, hr_ref, lr, cfg)
    cond = condition(lr, cfg)
    return guided_sample(model, schedule_from(cfg), sampler_config(cfg, terms, record), cond=cond)


def run_sr(cfg: ExperimentConfig, checkpoint, lr_images=None, hr_images=None, out=None,
           trajectories=False):
    """Super-resolve ``lr_images`` (default: the config's held-out set).

    ``hr_images`` provide the references for visual/perceptual guidance and
    the metrics; without them only data-fidelity guidance is possible and
    ``metrics.csv`` is not written.
    """
    out = _out_dir(cfg, out)
    model = ConvDenoiser.load(checkpoint)
    check_compatible(model, cfg)
    if lr_images is None:
        hr_images = load_data(cfg).hr_test if hr_images is None else hr_images
        lr_images = low_res(hr_images, cfg, stream=1)
    lr_images = np.asarray(lr_images, dtype=np.float64)
    if lr_images.ndim == 2:
        lr_images = lr_images[None]
    if hr_images is not None:
        hr_images = np.asarray(hr_images, dtype=np.float64).reshape(
            (-1,) + np.shape(hr_images)[-2:])
        expect = lr_images.shape[-2] * cfg.degradation.scale, lr_images.shape[-1] * cfg.degradation.scale
        if hr_images.shape[0] != lr_images.shape[0] or hr_images.shape[-2:] != expect:
            raise ShapeMismatch(f"shape mismatch: hr {hr_images.shape} vs lr {lr_images.shape}")
    sr, traj = super_resolve(model, cfg, lr_images, hr_images, record=trajectories)
    files = []
    img_dir = os.path.join(out, "sr")
    os.makedirs(img_dir, exist_ok=True)
    for i, img in enumerate(sr):
        path = os.path.join(img_dir, f"sr_{i:03d}.pgm")
        write_image(np.clip(img, 0.0, 1.0), path)
        files.append(path)
    result = {"sr": sr, "images": list(files)}
    if hr_images is not None:
        spec = spectral_from(cfg)
        label = method_label(cfg.guidance)
        rows = _metric_rows("bicubic", score(hr_images, condition(lr_images, cfg), spec))
        rows += _metric_rows(label, score(hr_images, sr, spec))
        path = os.path.join(out, "metrics.csv")
        _write_csv(path, METRICS_COLUMNS, rows)
        files.append(path)
        result["metrics"] = path
        result["rows"] = rows
    if trajectories:
        path = os.path.join(out, "trajectory.jsonl")
        traj.dump(path)
        files.append(path)
        result["trajectory"] = path
    write_manifest(out, cfg, "sr", files, {"checkpoint_sha256": _sha256(checkpoint)})
    return result


def _rho(cfg, kind):
    for g in cfg.guidance:
        if g.type == kind:
            return g
    return GuidanceConfig(type=kind, rho=DEFAULT_RHO[kind])


def run_ablation(cfg: ExperimentConfig, checkpoint=None, out=None):
    """The 4 + 2 cell ablation; every cell samples with the same seed.

    Cells ``none / visual / perceptual / both`` use the base model.  The two
    injection rows fine-tune that model with the same seed and iteration
    budget: ``grad_in_noise`` on the plain objective and then guides with
    the visual and perceptual gradients, ``loss_in_training`` adds the visual
    loss to the objective and guides with the perceptual gradient only.
    """
    out = _out_dir(cfg, out)
    data = load_data(cfg)
    cond_train = condition(low_res(data.hr_train, cfg), cfg)
    if checkpoint is None:
        base = new_model(cfg, data.hr_train, cond_train)
        base, _ = train_denoiser(base, data.hr_train, cond_train, schedule_from(cfg),
                                 _train_cfg(cfg, cfg.train.iterations, cfg.train.lr, cfg.seed))
    else:
        base = ConvDenoiser.load(checkpoint)
        check_compatible(base, cfg)
    hr = data.hr_test
    lr = low_res(hr, cfg, stream=1)
    vis = _rho(cfg, "visual").model_copy(update={"injection": "grad_in_noise"})
    per = _rho(cfg, "perceptual").model_copy(update={"injection": "grad_in_noise"})
    fe, seg, spec = extractor_from(cfg), segmenter_from(cfg), spectral_from(cfg)
    plain, _ = finetune(base, cfg, data, cond_train, [])
    in_loss, _ = finetune(base, cfg, data, cond_train, ["visual"])
    plan = [("none", base, []), ("visual", base, [vis]), ("perceptual", base, [per]),
            ("both", base, [vis, per]), ("grad_in_noise", plain, [vis, per]),
            ("loss_in_training", in_loss, [per])]
    rows = []
    for cell, model, specs in plan:
        sr, _ = super_resolve(model, cfg, lr, hr, specs=specs)
        arr = np.array(score(hr, sr, spec))
        rows.append({"cell": cell, "seed": cfg.seed, "psnr": float(arr[:, 0].mean()),
                     "ssim": float(arr[:, 1].mean()), "visual_loss": float(arr[:, 2].mean()),
                     "perceptual_loss": float(np.mean(perceptual_loss(hr, sr, fe, seg)))})
        log.info("ablation %s psnr %.3f", cell, rows[-1]["psnr"])
    path = os.path.join(out, "ablation.csv")
    _write_csv(path, ABLATION_COLUMNS, rows)
    by = {r["cell"]: r for r in rows}
    outcome = {"both_ge_none": by["both"]["psnr"] >= by["none"]["psnr"],
               "grad_in_noise_ge_loss_in_training":
                   by["grad_in_noise"]["psnr"] >= by["loss_in_training"]["psnr"]}
    write_manifest(out, cfg, "ablate", [path], {"outcome": outcome})
    return {"csv": path, "rows": rows, "outcome": outcome}
