"""Run configuration, Adam, the training loop, checkpoint resume and sampling."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .data import WindowedDataset
from .diffusion import cosine_schedule, forward_noise, sample
from .losses import LossWeights, total_loss
from .network import DiMTS, ModelConfig
from .permutation import pearson_similarity, solve_ordering
from .ssm import NonFiniteInputError

LOG_COLUMNS = ("step", "t", "l_ddpm", "l_fourier", "l_corr", "total")


class NumericalFailure(RuntimeError):
    """Raised when the loss or gradients stop being finite."""


@dataclass
class RunConfig:
    """Everything that determines a run.  Model shape (L, C) comes from the dataset."""

    hidden_dim: int = 128
    state_dim: int = 16
    num_encoders: int = 1
    num_difm: int = 3
    num_dipm: int = 3
    dilation_factors: tuple[int, ...] = (1, 2, 3)
    lag_period: int = 0          # 0 -> floor(sqrt(L)) snapped to a divisor of L
    lag_weight_init: float = 0.1
    use_lag_fusion: bool = True
    use_permutation: bool = True
    time_embed_dim: int = 128
    mlp_ratio: int = 4
    diffusion_steps: int = 500
    lambda1: float = 0.01
    lambda2: float = 0.01
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    steps: int = 1000
    batch_size: int = 64
    checkpoint_every: int = 0    # 0 -> only the final checkpoint
    sigma_mode: str = "beta"
    length: int = 48
    stride: int = 1
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.dilation_factors, str):
            self.dilation_factors = tuple(int(s) for s in self.dilation_factors.replace(",", " ").split())
        self.dilation_factors = tuple(int(r) for r in self.dilation_factors)
        for name in ("steps", "batch_size", "length", "stride", "diffusion_steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.sigma_mode not in ("beta", "posterior", "zero"):
            raise ValueError(f"unknown sigma_mode {self.sigma_mode!r}")

    def model_config(self, seq_len: int, channels: int, channel_order=None) -> ModelConfig:
        return ModelConfig(seq_len=seq_len, channels=channels, hidden_dim=self.hidden_dim,
                           state_dim=self.state_dim, num_encoders=self.num_encoders,
                           num_difm=self.num_difm, num_dipm=self.num_dipm,
                           dilation_factors=self.dilation_factors,
                           lag_period=self.lag_period or None,
                           lag_weight_init=self.lag_weight_init,
                           use_lag_fusion=self.use_lag_fusion,
                           use_permutation=self.use_permutation, channel_order=channel_order,
                           time_embed_dim=self.time_embed_dim, mlp_ratio=self.mlp_ratio,
                           diffusion_steps=self.diffusion_steps, seed=self.seed)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(fourier=self.lambda1, correlation=self.lambda2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dilation_factors"] = list(self.dilation_factors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if isinstance(v, list):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"

    def updated(self, **overrides) -> "RunConfig":
        d = self.to_dict()
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)


def _convert(name: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if isinstance(default, tuple):
        return tuple(int(s) for s in raw.replace(",", " ").split())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    defaults = RunConfig().to_dict()
    defaults["dilation_factors"] = tuple(defaults["dilation_factors"])
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ValueError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _convert(key, raw, defaults[key])
        except ValueError as exc:
            raise ValueError(f"{source}:{lineno}: {exc}") from None
    return out


def load_config(path) -> RunConfig:
    return RunConfig.from_dict(parse_config_text(Path(path).read_text(encoding="utf-8"), str(path)))


# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: list[ad.Parameter], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.value) for p in params]
        self.v = [np.zeros_like(p.value) for p in params]

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else np.zeros_like(p.value)
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.value = p.value - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def zero_grad(params) -> None:
    for p in params:
        p.grad = None


@dataclass
class TrainState:
    config: RunConfig
    model: DiMTS
    optimizer: Adam
    step: int
    data_min: np.ndarray
    data_max: np.ndarray
    names: list[str]


def channel_order_for(dataset: WindowedDataset) -> tuple[int, ...]:
    G = pearson_similarity(dataset.windows, dataset.names)
    return tuple(int(i) for i in solve_ordering(G).pi)


def init_state(config: RunConfig, dataset: WindowedDataset) -> TrainState:
    L, C = dataset.length, dataset.channels
    order = channel_order_for(dataset) if config.use_permutation and C > 1 else None
    model = DiMTS(config.model_config(L, C, order))
    opt = Adam(model.parameters(), config.lr, (config.beta1, config.beta2), config.adam_eps)
    return TrainState(config, model, opt, 0, dataset.data_min.copy(), dataset.data_max.copy(),
                      list(dataset.names))


def _batch_stats(x0, x_t, out) -> dict:
    def summary(a):
        a = np.asarray(a)
        finite = np.isfinite(a)
        vals = a[finite]
        return {"min": float(vals.min()) if vals.size else None,
                "max": float(vals.max()) if vals.size else None,
                "mean": float(vals.mean()) if vals.size else None,
                "nonfinite": int((~finite).sum())}
    return {"x0": summary(x0), "x_t": summary(x_t), "model_output": summary(out)}


def train_step(state: TrainState, windows: np.ndarray, schedule=None) -> dict:
    """One optimisation step; the batch, t and noise depend only on (seed, step)."""
    cfg = state.config
    schedule = schedule or cosine_schedule(cfg.diffusion_steps)
    rng = np.random.default_rng([cfg.seed, state.step])
    M = windows.shape[0]
    idx = rng.choice(M, size=cfg.batch_size, replace=M < cfg.batch_size)
    x0 = windows[idx]
    t = int(rng.integers(1, schedule.T + 1))
    noised = forward_noise(x0, t, schedule, rng)
    params = state.optimizer.params
    zero_grad(params)
    try:
        out = state.model(noised.x_t, t)
    except NonFiniteInputError:
        raise NumericalFailure(f"non-finite activations at step {state.step} (t={t}): "
                               + json.dumps(_batch_stats(x0, noised.x_t, np.nan))) from None
    loss, parts = total_loss(x0, out, cfg.loss_weights)
    if not np.isfinite(parts["total"]):
        raise NumericalFailure(f"non-finite loss at step {state.step} (t={t}): "
                               + json.dumps({"losses": parts,
                                             **_batch_stats(x0, noised.x_t, out.value)}))
    ad.backward(loss)
    bad = [n for n, p in state.model.named_parameters()
           if p.grad is not None and not np.all(np.isfinite(p.grad))]
    if bad:
        raise NumericalFailure(f"non-finite gradients at step {state.step} (t={t}) in {bad[:5]}: "
                               + json.dumps(_batch_stats(x0, noised.x_t, out.value)))
    state.optimizer.step()
    zero_grad(params)
    row = {"step": state.step, "t": t, "l_ddpm": parts["ddpm"], "l_fourier": parts["fourier"],
           "l_corr": parts["correlation"], "total": parts["total"]}
    state.step += 1
    return row


def format_log_rows(rows) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    for r in rows:
        writer.writerow([r["step"], r["t"]] + [repr(float(r[k])) for k in LOG_COLUMNS[2:]])
    return out.getvalue()


def train(config: RunConfig, dataset: WindowedDataset, out_dir=None,
          state: TrainState | None = None, until: int | None = None,
          progress=None) -> tuple[TrainState, list[dict]]:
    """Train to ``until`` (default ``config.steps``) steps, resuming from ``state`` if given.

    With ``out_dir`` the loss log (``loss_log.csv``), periodic checkpoints and the final
    ``checkpoint.bin`` are written there.
    """
    if dataset.windows.ndim != 3:
        raise ValueError("dataset windows must be [M, L, C]")
    state = state or init_state(config, dataset)
    until = config.steps if until is None else until
    schedule = cosine_schedule(config.diffusion_steps)
    out = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
        log_path = out / "loss_log.csv"
        if state.step == 0 or not log_path.exists():
            log_path.write_text(",".join(LOG_COLUMNS) + "\n", encoding="utf-8")
        else:
            _truncate_log(log_path, state.step)
    rows = []
    while state.step < until:
        row = train_step(state, dataset.windows, schedule)
        rows.append(row)
        if log_path is not None:
            with log_path.open("a", encoding="utf-8") as fh:
                fh.write(format_log_rows([row]))
        if out is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            save_state(out / f"checkpoint_{state.step:06d}.bin", state)
        if progress is not None:
            progress(row)
    if out is not None:
        save_state(out / "checkpoint.bin", state)
    return state, rows


def _truncate_log(path: Path, step: int) -> None:
    """Drop log rows at or beyond ``step`` so a resumed run continues the file cleanly."""
    lines = path.read_text(encoding="utf-8").splitlines()
    kept = [lines[0]] + [ln for ln in lines[1:] if int(ln.split(",", 1)[0]) < step]
    path.write_text("\n".join(kept) + "\n", encoding="utf-8")


def read_loss_log(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [{k: (int(v) if k in ("step", "t") else float(v)) for k, v in r.items()} for r in reader]


# ---------------------------------------------------------------------------
# checkpoints


def state_meta(state: TrainState) -> dict:
    return {"format": "dimts-checkpoint",
            "run_config": state.config.to_dict(),
            "model_config": state.model.config.to_dict(),
            "step": state.step,
            "adam_t": state.optimizer.t,
            "channel_names": state.names}


def state_arrays(state: TrainState) -> dict[str, np.ndarray]:
    arrays = {}
    for (name, p), m, v in zip(state.model.named_parameters(), state.optimizer.m, state.optimizer.v):
        arrays[f"param/{name}"] = p.value
        arrays[f"adam_m/{name}"] = m
        arrays[f"adam_v/{name}"] = v
    arrays["scale/min"] = state.data_min
    arrays["scale/max"] = state.data_max
    return arrays


def save_state(path, state: TrainState) -> None:
    ckpt.save(path, state_meta(state), state_arrays(state))


def load_state(path) -> TrainState:
    meta, arrays = ckpt.load(path)
    config = RunConfig.from_dict(meta["run_config"])
    model = DiMTS(ModelConfig.from_dict(meta["model_config"]))
    named = list(model.named_parameters())
    model.load_state_dict({k[len("param/"):]: a for k, a in arrays.items() if k.startswith("param/")})
    opt = Adam(model.parameters(), config.lr, (config.beta1, config.beta2), config.adam_eps)
    opt.t = int(meta["adam_t"])
    opt.m = [arrays[f"adam_m/{n}"].copy() for n, _ in named]
    opt.v = [arrays[f"adam_v/{n}"].copy() for n, _ in named]
    return TrainState(config, model, opt, int(meta["step"]), arrays["scale/min"],
                      arrays["scale/max"], list(meta["channel_names"]))


def generate(state: TrainState, n: int, seed: int | None = None, sigma: str | None = None) -> np.ndarray:
    """``n`` synthetic windows in the normalised [-1, 1] space."""
    cfg = state.config
    schedule = cosine_schedule(cfg.diffusion_steps)
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    mc = state.model.config
    return sample(state.model.predict, schedule, n, (mc.seq_len, mc.channels), rng,
                  sigma or cfg.sigma_mode)
