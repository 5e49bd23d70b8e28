"""RetiNerveNet and the three baselines.

The 768-point RNFL vector (TSNIT order) is split at index 384. The first half
(temporal -> superior -> nasal) feeds the ``sup`` sub-network, which predicts
the inferior visual hemifield; the second half feeds ``inf``, which predicts
the superior hemifield. Each RetiNerveNet sub-network is

    block1 (convs + pools, conv skip)  ->  r0
    r_t = RPL(r_{t-1}),  t = 1..7      (one shared linear conv)
    block3 (convs + pools, conv skip) -> block4 (1-channel linear conv, pools to 5)

applied to every r_t; pass t keeps the first 4/5/1 slots of its 5 outputs
according to the location table's (pass, slot) schedule.
"""

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .errors import ConfigError
from .kernels import conv_out_length
from .locations import HEMIFIELDS, N_LOCATIONS, N_PASSES, N_SLOTS, default_table, LocationTable
from .params import ParameterStore

RNFL_LENGTH = 768
HALF = RNFL_LENGTH // 2
KINDS = ("retinervenet", "linear", "fully_connected", "vanilla_conv", "generator_oracle")
# which hemifield each sub-network predicts
SUBNET_FIELD = {"sup": "inferior", "inf": "superior"}
SUBNETS = ("sup", "inf")

TARGET_COUNTS = {"retinervenet": 18864, "linear": 19968,
                 "fully_connected": 28468, "vanilla_conv": 27840}

REFERENCE_RETINN = {
    "block1": {
        "layers": [
            {"type": "conv", "out": 32, "width": 7, "stride": 2, "padding": 3},
            {"type": "pool", "window": 2},
            {"type": "conv", "out": 18, "width": 5, "stride": 2, "padding": 2},
        ],
        "skip": {"out": 18, "width": 8, "stride": 8, "padding": 0},
    },
    "rpl": {"width": 3, "padding": 1},
    "block3": {
        "layers": [
            {"type": "conv", "out": 14, "width": 5, "stride": 1, "padding": 0},
            {"type": "conv", "out": 15, "width": 5, "stride": 1, "padding": 0},
            {"type": "pool", "window": 2},
        ],
        "skip": {"out": 15, "width": 10, "stride": 2, "padding": 0},
    },
    "block4": {"width": 3, "padding": 1, "pools": [2, 2]},
}

# Same layer layout minus skips, 7 unshared progression convs; channel counts
# found by enumeration so the total is exactly the target 27840.
REFERENCE_VANILLA = {
    "block1": {
        "layers": [
            {"type": "conv", "out": 39, "width": 7, "stride": 2, "padding": 3},
            {"type": "pool", "window": 2},
            {"type": "conv", "out": 18, "width": 5, "stride": 2, "padding": 2},
        ],
    },
    "rpl": {"width": 3, "padding": 1},
    "block3": {
        "layers": [
            {"type": "conv", "out": 17, "width": 5, "stride": 1, "padding": 0},
            {"type": "conv", "out": 18, "width": 5, "stride": 1, "padding": 0},
            {"type": "pool", "window": 2},
        ],
    },
    "block4": {"width": 3, "padding": 1, "pools": [2, 2]},
}

REFERENCE_FC = {"hidden": [32, 32]}


def reference_config(kind):
    return copy.deepcopy({"retinervenet": REFERENCE_RETINN, "vanilla_conv": REFERENCE_VANILLA,
                          "fully_connected": REFERENCE_FC, "linear": {},
                          "generator_oracle": {}}[kind])


# ---------------------------------------------------------------------------
# shape inference / validation

def _conv_shape(spec, channels, length, where):
    for key in ("width",):
        if key not in spec:
            raise ConfigError(f"{where}: missing {key!r}")
    width = int(spec["width"])
    stride = int(spec.get("stride", 1))
    padding = int(spec.get("padding", 0))
    if width < 1 or stride < 1 or padding < 0:
        raise ConfigError(f"{where}: width/stride/padding out of range")
    out_len = conv_out_length(length, width, stride, padding)
    if out_len < 1:
        raise ConfigError(f"{where}: width {width}, stride {stride}, padding {padding} "
                          f"do not fit length {length}")
    return int(spec.get("out", channels)), out_len


def _block_shape(block, channels, length, where):
    c, n = channels, length
    for k, layer in enumerate(block.get("layers", [])):
        if layer["type"] == "conv":
            c, n = _conv_shape(layer, c, n, f"{where}.layers[{k}]")
        elif layer["type"] == "pool":
            w = int(layer["window"])
            if w < 1 or n % w:
                raise ConfigError(f"{where}.layers[{k}]: pool window {w} does not divide length {n}")
            n //= w
        else:
            raise ConfigError(f"{where}.layers[{k}]: unknown layer type {layer['type']!r}")
    return c, n


def subnet_shapes(cfg, recursive=True):
    """Validate a sub-network config and return its (channels, length) waypoints."""
    try:
        c0, n0 = 1, HALF
        c1, n1 = _block_shape(cfg["block1"], c0, n0, "block1")
        if "skip" in cfg["block1"]:
            if not recursive:
                raise ConfigError("vanilla_conv has no skip connections")
            sc = _conv_shape(cfg["block1"]["skip"], c0, n0, "block1.skip")
            if sc != (c1, n1):
                raise ConfigError(f"block1 skip output {sc} != main path output {(c1, n1)}")
        elif recursive:
            raise ConfigError("block1 needs a skip connection")
        rpl = cfg["rpl"]
        if int(rpl.get("stride", 1)) != 1:
            raise ConfigError("rpl must have stride 1")
        rc, rn = _conv_shape(rpl, c1, n1, "rpl")
        if rc != c1:
            raise ConfigError(f"rpl changes channel count {c1} -> {rc}; recursion needs equal in/out channels")
        if rn != n1:
            raise ConfigError(f"rpl changes length {n1} -> {rn}; recursion needs length-preserving padding")
        c3, n3 = _block_shape(cfg["block3"], c1, n1, "block3")
        if "skip" in cfg["block3"]:
            if not recursive:
                raise ConfigError("vanilla_conv has no skip connections")
            sc = _conv_shape(cfg["block3"]["skip"], c1, n1, "block3.skip")
            if sc != (c3, n3):
                raise ConfigError(f"block3 skip output {sc} != main path output {(c3, n3)}")
        elif recursive:
            raise ConfigError("block3 needs a skip connection")
        b4 = cfg["block4"]
        if int(b4.get("out", 1)) != 1:
            raise ConfigError("block4 conv must have exactly 1 output channel")
        _, n4 = _conv_shape(dict(b4, out=1), c3, n3, "block4")
        for w in b4.get("pools", []):
            if n4 % int(w):
                raise ConfigError(f"block4 pool window {w} does not divide length {n4}")
            n4 //= int(w)
        if n4 != N_SLOTS:
            raise ConfigError(f"block3+block4 yield length {n4}; the pass schedule needs {N_SLOTS}")
    except KeyError as exc:
        raise ConfigError(f"missing config key {exc}") from None
    return {"input": (c0, n0), "block1": (c1, n1), "block3": (c3, n3), "output": (1, N_SLOTS)}


def analytic_parameter_count(kind, cfg=None):
    """Closed-form count: sum(out*in*width + out) over convs, plus dense/mask terms."""
    cfg = reference_config(kind) if cfg is None else cfg
    if kind == "linear":
        return 2 * (N_LOCATIONS // 2) * HALF
    if kind == "fully_connected":
        sizes = [HALF] + list(cfg["hidden"]) + [N_LOCATIONS // 2]
        return 2 * sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if kind == "generator_oracle":
        return 0

    def conv(o, i, w):
        return o * i * w + o

    def block(b, c):
        total = 0
        for layer in b["layers"]:
            if layer["type"] == "conv":
                total += conv(layer["out"], c, layer["width"])
                c = layer["out"]
        return total, c

    n1, c1 = block(cfg["block1"], 1)
    n3, c3 = block(cfg["block3"], c1)
    n4 = conv(1, c3, cfg["block4"]["width"])
    prog = conv(c1, c1, cfg["rpl"]["width"])
    if kind == "retinervenet":
        skips = conv(cfg["block1"]["skip"]["out"], 1, cfg["block1"]["skip"]["width"])
        skips += conv(cfg["block3"]["skip"]["out"], c1, cfg["block3"]["skip"]["width"])
        return 2 * (n1 + prog + n3 + n4 + skips) + N_LOCATIONS
    if kind == "vanilla_conv":
        return 2 * (n1 + N_PASSES * prog + n3 + n4)
    raise ConfigError(f"unknown model kind {kind!r}")


# ---------------------------------------------------------------------------
# model container

@dataclass
class ModelVariant:
    kind: str
    config: dict
    params: ParameterStore
    table: LocationTable
    hyper: dict = field(default_factory=lambda: {"alpha": 0.0, "beta": 0.0, "gamma": 5.0})
    normalization: dict = None      # {"mean": (768,), "std": (768,)}
    validation_metrics: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def parameter_count(self):
        return self.params.total_count

    def variant_id(self):
        return variant_id(self.hyper["alpha"], self.hyper["beta"])

    def copy(self):
        return ModelVariant(self.kind, copy.deepcopy(self.config), self.params.copy(), self.table,
                            dict(self.hyper),
                            None if self.normalization is None else
                            {k: np.array(v) for k, v in self.normalization.items()},
                            copy.deepcopy(self.validation_metrics), copy.deepcopy(self.meta))

    def normalize(self, rnfl):
        rnfl = np.asarray(rnfl, dtype=np.float64)
        if self.normalization is None:
            return rnfl
        return (rnfl - self.normalization["mean"]) / self.normalization["std"]


def variant_id(alpha, beta):
    return f"a{float(alpha):.2f}_b{float(beta):.2f}"


def _conv_init(rng, out_ch, in_ch, width, gain):
    std = np.sqrt(gain / (in_ch * width))
    return rng.normal(0.0, std, size=(out_ch, in_ch, width))


def _progression_init(rng, channels, width, padding):
    # identity plus small noise: keeps 7 stacked applications well scaled
    w = rng.normal(0.0, 0.01, size=(channels, channels, width))
    w[np.arange(channels), np.arange(channels), padding] += 1.0
    return w


def _init_block(store, rng, prefix, block, channels):
    c = channels
    for k, layer in enumerate(block["layers"]):
        if layer["type"] != "conv":
            continue
        store.add(f"{prefix}.conv{k}.w", _conv_init(rng, layer["out"], c, layer["width"], 2.0))
        store.add(f"{prefix}.conv{k}.b", np.zeros(layer["out"]))
        c = layer["out"]
    if "skip" in block:
        sk = block["skip"]
        store.add(f"{prefix}.skip.w", _conv_init(rng, sk["out"], channels, sk["width"], 1.0))
        store.add(f"{prefix}.skip.b", np.zeros(sk["out"]))
    return c


def _init_conv_subnet(store, rng, sub, cfg, recursive):
    c1 = _init_block(store, rng, f"{sub}.b1", cfg["block1"], 1)
    rpl = cfg["rpl"]
    names = ["rpl"] if recursive else [f"prog{t}" for t in range(N_PASSES)]
    for name in names:
        store.add(f"{sub}.{name}.w", _progression_init(rng, c1, rpl["width"], int(rpl.get("padding", 0))))
        store.add(f"{sub}.{name}.b", np.zeros(c1))
    c3 = _init_block(store, rng, f"{sub}.b3", cfg["block3"], c1)
    store.add(f"{sub}.b4.w", _conv_init(rng, 1, c3, cfg["block4"]["width"], 1.0))
    store.add(f"{sub}.b4.b", np.zeros(1))


def build_retinervenet(config=None, table=None, seed=0):
    """RetiNerveNet with two independent sub-networks and a 52-logit MD mask.

    ``config`` is one sub-network config used for both halves, or a dict
    ``{"sup": cfg, "inf": cfg}`` when they differ.
    """
    config = reference_config("retinervenet") if config is None else copy.deepcopy(config)
    pair = config if set(config) == set(SUBNETS) else {s: config for s in SUBNETS}
    for s in SUBNETS:
        subnet_shapes(pair[s], recursive=True)
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    for s in SUBNETS:
        _init_conv_subnet(store, rng, s, pair[s], recursive=True)
    store.add("md.logits", np.zeros(N_LOCATIONS))
    return ModelVariant("retinervenet", config, store, table or default_table())


def build_baseline(kind, config=None, table=None, seed=0):
    config = reference_config(kind) if config is None else copy.deepcopy(config)
    rng = np.random.default_rng(seed)
    store = ParameterStore()
    n_out = N_LOCATIONS // 2
    if kind == "linear":
        for s in SUBNETS:
            store.add(f"{s}.w", rng.normal(0.0, np.sqrt(1.0 / HALF), size=(n_out, HALF)))
    elif kind == "fully_connected":
        sizes = [HALF] + list(config["hidden"]) + [n_out]
        for s in SUBNETS:
            for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
                gain = 2.0 if k < len(sizes) - 2 else 1.0
                store.add(f"{s}.fc{k}.w", rng.normal(0.0, np.sqrt(gain / a), size=(b, a)))
                store.add(f"{s}.fc{k}.b", np.zeros(b))
    elif kind == "vanilla_conv":
        subnet_shapes(config, recursive=False)
        for s in SUBNETS:
            _init_conv_subnet(store, rng, s, config, recursive=False)
    else:
        raise ConfigError(f"unknown baseline kind {kind!r}")
    model = ModelVariant(kind, config, store, table or default_table())
    expected = TARGET_COUNTS.get(kind)
    if kind in ("linear", "fully_connected") and store.total_count != expected:
        raise ConfigError(f"{kind} baseline has {store.total_count} parameters, expected {expected}")
    return model


def build(kind, config=None, table=None, seed=0):
    if kind == "retinervenet":
        return build_retinervenet(config, table, seed)
    if kind == "generator_oracle":
        return ModelVariant(kind, config or {}, ParameterStore(), table or default_table())
    return build_baseline(kind, config, table, seed)


# ---------------------------------------------------------------------------
# forward pass

def _run_block(tape, prefix, block, h):
    x_in = h
    for k, layer in enumerate(block["layers"]):
        if layer["type"] == "conv":
            h = ad.conv1d(h, tape.param(f"{prefix}.conv{k}.w"), tape.param(f"{prefix}.conv{k}.b"),
                          int(layer.get("stride", 1)), int(layer.get("padding", 0)), "relu")
        else:
            h = ad.maxpool1d(h, int(layer["window"]))
    if "skip" in block:
        sk = block["skip"]
        s = ad.conv1d(x_in, tape.param(f"{prefix}.skip.w"), tape.param(f"{prefix}.skip.b"),
                      int(sk.get("stride", 1)), int(sk.get("padding", 0)), "linear")
        h = ad.add(h, s)
    return h


def rpl_unroll(r0, w, b, passes=N_PASSES, padding=None):
    """[r1, ..., r_passes] with r_t = conv(r_{t-1}; w, b), same parameters every pass.

    Accepts Vars (recorded on their tape) or plain arrays shaped (B, C, L)
    or (C, L), in which case arrays are returned.
    """
    as_arrays = not isinstance(r0, ad.Var)
    if as_arrays:
        r0 = np.asarray(r0, dtype=np.float64)
        squeeze = r0.ndim == 2
        if squeeze:
            r0 = r0[None]
        tape = ad.Tape()
        r0, w, b = tape.constant(r0), tape.constant(w), tape.constant(b)
    if padding is None:
        padding = (w.value.shape[2] - 1) // 2
    out = []
    r = r0
    for _ in range(passes):
        nxt = ad.conv1d(r, w, b, 1, padding, "linear")
        if nxt.value.shape != r.value.shape:
            raise RuntimeError(f"rpl shape drift {r.value.shape} -> {nxt.value.shape}")
        out.append(nxt)
        r = nxt
    if as_arrays:
        return [o.value[0] if squeeze else o.value for o in out]
    return out


def _head(tape, sub, cfg, h):
    """block3 + block4 on a stacked (passes*B, C, L) input -> (passes*B, 1, 5)."""
    h = _run_block(tape, f"{sub}.b3", cfg["block3"], h)
    b4 = cfg["block4"]
    h = ad.conv1d(h, tape.param(f"{sub}.b4.w"), tape.param(f"{sub}.b4.b"),
                  int(b4.get("stride", 1)), int(b4.get("padding", 0)), "linear")
    for w in b4.get("pools", []):
        h = ad.maxpool1d(h, int(w))
    return h


def _conv_subnet(tape, sub, cfg, x, recursive):
    """x: (B, 1, 384) -> Var (B, passes*5) in pass-major slot order."""
    nb = x.value.shape[0]
    r = _run_block(tape, f"{sub}.b1", cfg["block1"], x)
    padding = int(cfg["rpl"].get("padding", 0))
    if recursive:
        passes = rpl_unroll(r, tape.param(f"{sub}.rpl.w"), tape.param(f"{sub}.rpl.b"), N_PASSES, padding)
    else:
        passes = []
        for t in range(N_PASSES):
            r = ad.conv1d(r, tape.param(f"{sub}.prog{t}.w"), tape.param(f"{sub}.prog{t}.b"), 1, padding, "linear")
            passes.append(r)
    # block3/block4 parameters are shared across passes, so run all passes as one batch
    stacked = ad.concat(passes, axis=0)
    y = _head(tape, sub, cfg, stacked)                # (7B, 1, 5)
    y = ad.reshape(y, (N_PASSES, nb, N_SLOTS))
    y = ad.transpose(y, (1, 0, 2))                          # (B, 7, 5)
    return ad.reshape(y, (nb, N_PASSES * N_SLOTS))


def collect_outputs(per_pass, table_or_schedule, hemifield):
    """Select the kept (pass, slot) outputs for one hemifield, in canonical order.

    ``per_pass`` is (7, 5) or (B, 7, 5).
    """
    sched = getattr(table_or_schedule, "schedule", table_or_schedule)
    arr = np.asarray(per_pass, dtype=np.float64)
    flat = arr.reshape(arr.shape[:-2] + (N_PASSES * N_SLOTS,))
    return flat[..., sched.gather[hemifield]]


def estimate_md(vf, mask_logits):
    """Softmax-weighted (convex) combination of the 52 field values."""
    z = np.asarray(mask_logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return np.asarray(vf, dtype=np.float64) @ (e / e.sum())


def _assemble(tape, table, field_outputs):
    """Place per-hemifield (B, 26) Vars into canonical 52-location order."""
    sched = table.schedule
    order = np.concatenate([sched.locations[h] for h in HEMIFIELDS])
    joined = ad.concat([field_outputs[h] for h in HEMIFIELDS], axis=1)
    return ad.take(joined, np.argsort(order))


def forward_tape(model, tape, x):
    """Record the forward pass for normalized inputs x (B, 768); returns (vf, md) Vars."""
    xv = x.value
    if xv.ndim != 2 or xv.shape[1] != RNFL_LENGTH:
        raise ConfigError(f"expected (batch, {RNFL_LENGTH}) RNFL input, got {xv.shape}")
    halves = ad.split(x, 2, axis=1)
    halves = {"sup": halves[0], "inf": halves[1]}
    sched = model.table.schedule
    kind = model.kind
    fields = {}
    for sub in SUBNETS:
        h = halves[sub]
        hemi = SUBNET_FIELD[sub]
        if kind in ("retinervenet", "vanilla_conv"):
            cfg = model.config.get(sub, model.config) if kind == "retinervenet" else model.config
            h3 = ad.reshape(h, (h.value.shape[0], 1, HALF))
            out35 = _conv_subnet(tape, sub, cfg, h3, recursive=(kind == "retinervenet"))
            fields[hemi] = ad.take(out35, sched.gather[hemi])
        elif kind == "linear":
            fields[hemi] = ad.dense(h, tape.param(f"{sub}.w"))
        elif kind == "fully_connected":
            n_layers = len(model.config["hidden"]) + 1
            for k in range(n_layers):
                act = "relu" if k < n_layers - 1 else "linear"
                h = ad.dense(h, tape.param(f"{sub}.fc{k}.w"), tape.param(f"{sub}.fc{k}.b"), act)
            fields[hemi] = h
        else:
            raise ConfigError(f"model kind {kind!r} has no differentiable forward pass")
    vf = _assemble(tape, model.table, fields)
    if "md.logits" in model.params:
        md = ad.softmax_combine(vf, tape.param("md.logits"))
    else:
        md = ad.row_mean(vf)
    return vf, md


def forward(model, x):
    """Inference on normalized input. x: (768,) or (B, 768) -> (vf, md) arrays."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    if model.kind == "generator_oracle":
        from .synth import oracle_predict
        raw = x * model.normalization["std"] + model.normalization["mean"] if model.normalization else x
        vf = oracle_predict(raw, model.table)
        md = vf.mean(axis=1)
    else:
        tape = ad.Tape(model.params, grad=False)
        vf_v, md_v = forward_tape(model, tape, tape.constant(x))
        vf, md = vf_v.value, md_v.value
    if single:
        return vf[0], float(md[0])
    return vf, md


def predict(model, rnfl, batch_size=256):
    """Inference on raw thickness values (applies the stored normalization)."""
    rnfl = np.atleast_2d(np.asarray(rnfl, dtype=np.float64))
    vfs, mds = [], []
    for start in range(0, rnfl.shape[0], batch_size):
        vf, md = forward(model, model.normalize(rnfl[start:start + batch_size]))
        vfs.append(np.atleast_2d(vf))
        mds.append(np.atleast_1d(md))
    if not vfs:
        return np.zeros((0, N_LOCATIONS)), np.zeros(0)
    return np.concatenate(vfs), np.concatenate(mds)


# ---------------------------------------------------------------------------
# persistence

def to_header(model):
    header = {
        "kind": model.kind,
        "config": model.config,
        "hyper": {k: float(v) for k, v in model.hyper.items()},
        "parameter_count": model.parameter_count,
        "analytic_parameter_count": analytic_parameter_count(model.kind, model.config),
        "target_parameter_count": TARGET_COUNTS.get(model.kind),
        "locations": model.table.records,
        "validation_metrics": model.validation_metrics,
        "meta": model.meta,
    }
    if model.normalization is not None:
        header["normalization"] = {k: [float(v) for v in np.asarray(a)]
                                   for k, a in model.normalization.items()}
    return header


def save_model(model, path):
    return checkpoint.save(path, to_header(model), model.params)


def load_model(path):
    header, store = checkpoint.load(path)
    norm = header.get("normalization")
    if norm is not None:
        norm = {k: np.asarray(v, dtype=np.float64) for k, v in norm.items()}
    model = ModelVariant(header["kind"], header["config"], store, LocationTable(header["locations"]),
                         header["hyper"], norm, header.get("validation_metrics", {}), header.get("meta", {}))
    return model
