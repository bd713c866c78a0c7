"""Flat ``key = value`` run configuration.

CLI flags override file values; unknown keys fail loudly with the full key
list.  Defaults follow the published operating point of the method this
package implements (3 GNN/3 MLP layers at width 256, clip 0.1, 30 epochs,
batch 300, candidate range 15-20 widened to 128 in evaluation, horizon 12
train / 20 eval, curiosity weight 0.1 over episodes 100-1000).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _as_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {s!r}")


@dataclass
class RunConfig:
    # run
    seed: int = 0
    workers: int = 4
    out: str = "run"
    figures: bool = True
    checkpoint_every: int = 10
    # environment
    library: str = "leafy2"            # tiny | leafy2 | leafy3 | <path>
    seed_label: int = 0
    start_file: str = ""
    horizon_train: int = 12
    horizon_eval: int = 20
    candidates_lo: int = 15
    candidates_hi: int = 20
    candidates_eval: int = 128
    max_fragment_size: int = 4
    mutation_cache: int = 512
    n_labels: int = 3
    edge_dim: int = 1
    extra_dim: int = 0
    # encoder
    n_layers: int = 3
    hidden: int = 256
    heads: int = 2
    mlp_depth: int = 3
    n_shared: int = 3
    spatial_k: int = 4
    use_spatial: bool = True
    d_k: int = 256
    final_hidden: int = 256
    critic_depth: int = 3
    pretrained: str = ""
    # optimization
    episodes: int = 2000
    gamma: float = 0.99
    clip_eps: float = 0.1
    epochs: int = 30
    batch_size: int = 300
    minibatch: int = 64
    lr_actor: float = 2e-3
    lr_critic: float = 1e-4
    entropy_coef: float = 0.01
    normalize_advantages: bool = True
    keep_last: int = 1000
    # curiosity
    use_rnd: bool = True
    rnd_dim: int = 8
    eta: float = 5.0
    lr_rnd: float = 2e-3
    rnd_buffer: int = 5000
    iota: float = 0.1
    innovation_delay: int = 100
    innovation_cutoff: int = 1000
    # objective
    objective: str = "single"          # single | constrained | multi
    scorer: str = "surrogate-logp"
    scorer_timeout: float = 60.0
    omega: float = 0.6
    mu: float = 8.0
    lam: float = 100.0
    delta: float = 0.4
    delta_list: str = "0,0.2,0.4,0.6"
    fp_radius: int = 2
    fp_width: int = 2048
    # evaluation
    eval_episodes: int = 1000
    # pretraining
    dataset: str = ""
    pretrain_epochs: int = 30
    pretrain_lr: float = 1e-3
    pretrain_minibatch: int = 64

    def deltas(self) -> list[float]:
        try:
            return [float(x) for x in self.delta_list.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"bad delta_list {self.delta_list!r}") from None


_FIELDS = {f.name: f.type for f in fields(RunConfig)}


def valid_keys() -> list[str]:
    return sorted(_FIELDS)


def _coerce(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    if kind == "bool":
        return _as_bool(raw)
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def set_key(cfg: RunConfig, key: str, raw: str) -> None:
    if key not in _FIELDS:
        raise ConfigError(
            f"unknown config key {key!r}; valid keys: {', '.join(valid_keys())}")
    try:
        setattr(cfg, key, _coerce(key, raw))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for ln_no, line in enumerate(text.split("\n"), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {ln_no}: expected 'key = value'")
        key, _, raw = stripped.partition("=")
        set_key(cfg, key.strip(), raw)
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())
