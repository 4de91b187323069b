"""Model size configs for the target transformer and the draft add-ons."""

from dataclasses import dataclass

from padrec.errors import ConfigError


@dataclass(frozen=True)
class TargetConfig:
    """Decoder-only transformer dimensions; defaults fit a single CPU core."""

    vocab_size: int
    d_model: int = 64
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 512

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.n_heads} heads")
        if min(self.vocab_size, self.d_model, self.n_layers, self.n_heads, self.d_ff) < 1:
            raise ConfigError("non-positive model dimension")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def heavy_target_config(vocab_size: int) -> TargetConfig:
    """Scaled-up config for the relative speedup study."""
    return TargetConfig(vocab_size=vocab_size, d_model=128, n_layers=8, n_heads=4, d_ff=512)


@dataclass(frozen=True)
class DraftConfig:
    """Draft add-on dimensions; the layer itself reuses the target's sizes."""

    n_slots: int  # IPE rows: slot 1..K, separator, context
    b_train: int  # SPE rows: one per speculation depth
    ablation: str = "full"

    def __post_init__(self):
        if self.n_slots < 1 or self.b_train < 1:
            raise ConfigError("draft tables need at least one row")
