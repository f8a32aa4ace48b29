"""Force-supervised flow matching with a small velocity model.

Actions are interpolated from standard normal noise along straight lines,
``x_t = (1 - t) eps + t a``, and the model regresses the constant velocity
``u = a - eps`` under a per-dimension weighted squared error.  Gradients are
written out by hand for both model families.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .controller import PolicyOutput
from .dataset import action_targets, default_suite
from .sim import CONTROL_DT, contact_width, run_episode, scripted_trajectory
from .tactile import FeatureStats

SEMANTIC_DIM = 6
PADDED_DIM = 32
FORCE_DIMS = (3, 4, 5)
OBS_DIM = 2 + 48 + 1 + 2
MODEL_SCHEMA = "gentlegrip-flow/1"


class ShapeError(ValueError):
    pass


class DatasetError(ValueError):
    pass


@dataclass
class FlowSample:
    eps: np.ndarray
    a: np.ndarray
    t: float
    x_t: np.ndarray
    u_t: np.ndarray


def make_flow_sample(a, eps, t):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    a = np.asarray(a, dtype=float)
    eps = np.asarray(eps, dtype=float)
    return FlowSample(eps, a, t, (1.0 - t) * eps + t * a, a - eps)


def loss_weights(lambda_force=0.1, padded_dim=PADDED_DIM, semantic_dim=SEMANTIC_DIM,
                 force_dims=FORCE_DIMS):
    w = np.zeros(padded_dim)
    w[:semantic_dim] = 1.0
    w[list(force_dims)] = lambda_force
    return w


def weighted_loss(v, u, w, d_act=None):
    """``(1 / D_act) * sum_d w_d (v_d - u_d)^2``; ``D_act`` defaults to the non-padding width."""
    v, u, w = (np.asarray(x, dtype=float) for x in (v, u, w))
    if v.shape != u.shape or v.shape[-1] != w.shape[-1]:
        raise ShapeError(f"shape mismatch: v {v.shape}, u {u.shape}, w {w.shape}")
    if d_act is None:
        d_act = int(np.count_nonzero(w))
    return float(np.sum(w * (v - u) ** 2) / d_act)


# --- velocity models ---------------------------------------------------------

@dataclass
class VelocityModel:
    family: str
    params: dict
    in_dim: int
    out_dim: int = PADDED_DIM

    @classmethod
    def init(cls, family, in_dim, out_dim=PADDED_DIM, hidden=64, seed=0):
        rng = np.random.default_rng(seed)
        if family == "linear":
            params = {"W": rng.normal(0, 1 / math.sqrt(in_dim), (out_dim, in_dim)),
                      "b": np.zeros(out_dim)}
        elif family == "mlp":
            params = {"W1": rng.normal(0, 1 / math.sqrt(in_dim), (hidden, in_dim)),
                      "b1": np.zeros(hidden),
                      "W2": rng.normal(0, 1 / math.sqrt(hidden), (out_dim, hidden)),
                      "b2": np.zeros(out_dim)}
        else:
            raise ValueError(f"unknown model family {family!r}")
        return cls(family, params, in_dim, out_dim)

    def forward(self, z, cache=False):
        p = self.params
        if self.family == "linear":
            out = z @ p["W"].T + p["b"]
            return (out, None) if cache else out
        h = np.tanh(z @ p["W1"].T + p["b1"])
        out = h @ p["W2"].T + p["b2"]
        return (out, h) if cache else out

    def backward(self, z, h, g_out):
        """Parameter gradients given dLoss/dOutput ``g_out`` (batch, out_dim)."""
        p = self.params
        if self.family == "linear":
            return {"W": g_out.T @ z, "b": g_out.sum(axis=0)}
        g_pre = (g_out @ p["W2"]) * (1.0 - h**2)
        return {"W2": g_out.T @ h, "b2": g_out.sum(axis=0),
                "W1": g_pre.T @ z, "b1": g_pre.sum(axis=0)}

    def copy(self):
        return VelocityModel(self.family, {k: v.copy() for k, v in self.params.items()},
                             self.in_dim, self.out_dim)


def model_input(x_t, t, obs):
    x_t = np.atleast_2d(x_t)
    t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1, 1), (x_t.shape[0], 1))
    obs = np.broadcast_to(np.atleast_2d(obs), (x_t.shape[0], np.atleast_2d(obs).shape[1]))
    return np.hstack([x_t, t, obs])


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray   # padded, normalised
    eps: np.ndarray
    t: np.ndarray


def draw_batch(obs, actions, rng, size):
    idx = rng.integers(0, len(obs), size)
    a = actions[idx]
    return Batch(obs[idx], a, rng.standard_normal(a.shape), rng.uniform(0.0, 1.0, size))


def batch_loss(model, batch, weights, d_act=SEMANTIC_DIM):
    t = batch.t[:, None]
    x_t = (1 - t) * batch.eps + t * batch.actions
    u = batch.actions - batch.eps
    v = model.forward(model_input(x_t, batch.t, batch.obs))
    return float(np.mean(np.sum(weights * (v - u) ** 2, axis=1)) / d_act)


def loss_gradient(model, batch, weights, d_act=SEMANTIC_DIM):
    """Exact gradient of the batch-mean weighted loss; returns ``(loss, grads)``."""
    t = batch.t[:, None]
    x_t = (1 - t) * batch.eps + t * batch.actions
    u = batch.actions - batch.eps
    z = model_input(x_t, batch.t, batch.obs)
    v, h = model.forward(z, cache=True)
    r = v - u
    n = len(batch.t)
    loss = float(np.sum(weights * r**2) / (n * d_act))
    g_out = 2.0 * weights * r / (n * d_act)
    return loss, model.backward(z, h, g_out)


# --- features ----------------------------------------------------------------

@dataclass
class Normalizer:
    force_stats: FeatureStats
    action_mean: np.ndarray
    action_std: np.ndarray

    @classmethod
    def from_manifest(cls, manifest):
        a = manifest["action_stats"]
        return cls(FeatureStats.from_dict(manifest["force_feature_stats"]),
                   np.asarray(a["mean"], dtype=float), np.asarray(a["std"], dtype=float))

    def to_dict(self):
        return {"force_feature_stats": self.force_stats.to_dict(),
                "action_stats": {"mean": self.action_mean.tolist(), "std": self.action_std.tolist()}}

    def encode_action(self, a):
        a = np.atleast_2d(a)
        out = np.zeros((a.shape[0], PADDED_DIM))
        out[:, :SEMANTIC_DIM] = (a - self.action_mean) / self.action_std
        return out

    def decode_action(self, x):
        x = np.atleast_2d(x)
        return x[:, :SEMANTIC_DIM] * self.action_std + self.action_mean


def log_arrays(log):
    """Raw per-tick inputs of a log: force windows (n, 8, 6), widths, offsets, semantic actions."""
    steps = log.steps
    forces = np.array([s["f_left"] + s["f_right"] for s in steps])
    padded = np.vstack([np.zeros((7, 6)), forces])
    n = len(steps) - 1
    windows = np.stack([padded[k:k + 8] for k in range(n)])
    widths = np.array([s["p"] for s in steps[:n]])
    offsets = np.array([(s["object"][0] - s["ee"][0], s["object"][1] - s["ee"][1]) for s in steps[:n]])
    return windows, widths, offsets, np.array(action_targets(log))


def encode_obs(adverb_class, windows, widths, offsets, norm, tactile=True):
    """Observation rows; ``tactile=False`` zeroes the 48 normalised force features."""
    if adverb_class not in ("firm", "gentle"):
        raise ValueError(f"unknown adverb class {adverb_class!r}")
    n = len(widths)
    onehot = np.tile([1.0, 0.0] if adverb_class == "firm" else [0.0, 1.0], (n, 1))
    if tactile:
        feats = (windows.reshape(n, -1) - norm.force_stats.mean) / norm.force_stats.std
    else:
        feats = np.zeros((n, 48))
    return np.hstack([onehot, feats, ((widths - 0.04) / 0.02)[:, None], offsets * 10.0])


def obs_vector(adverb_class, window, width, offset, norm, tactile=True):
    """Single observation of length ``OBS_DIM``."""
    w = np.asarray(window, dtype=float)
    if w.shape != (8, 6):
        raise ShapeError(f"force window must be (8, 6), got {w.shape}")
    return encode_obs(adverb_class, w[None], np.array([width]),
                      np.asarray(offset, dtype=float)[None], norm, tactile)[0]


def log_samples(log, norm, tactile=True):
    """``(obs, semantic action)`` rows for every tick that has a successor."""
    windows, widths, offsets, act = log_arrays(log)
    return encode_obs(log.header.get("adverb_class", "firm"), windows, widths, offsets, norm, tactile), act


# closed-loop force transients leave the replayed range; rescaled copies cover them
AUGMENT_SCALE = (0.5, 2.5)


def build_training_set(logs, norm, tactile=True, successful_only=True, augment=0, seed=0):
    """Stack observations and semantic actions over ``logs``.

    ``augment`` extra copies of each log are added with the force history
    multiplied by a per-sample factor drawn from ``AUGMENT_SCALE``.
    """
    rng = np.random.default_rng([seed, 11])
    obs, act = [], []
    classes = set()
    for log in logs:
        if successful_only and not log.summary["success"]:
            continue
        cls = log.header.get("adverb_class", "firm")
        classes.add(cls)
        windows, widths, offsets, a = log_arrays(log)
        obs.append(encode_obs(cls, windows, widths, offsets, norm, tactile))
        act.append(a)
        for _ in range(augment):
            scale = rng.uniform(*AUGMENT_SCALE, size=(len(widths), 1, 1))
            obs.append(encode_obs(cls, windows * scale, widths, offsets, norm, tactile))
            act.append(a)
    if not {"firm", "gentle"} <= classes:
        raise DatasetError(f"training data must contain both adverb classes, found {sorted(c for c in classes if c)}")
    return np.vstack(obs), np.vstack(act)


# --- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    family: str = "mlp"
    hidden: int = 64
    steps: int = 15000
    batch: int = 256
    # a large-model peak of 2.5e-5, rescaled for a small model trained from scratch
    peak_lr: float = 2.5e-5 * 400
    final_lr_ratio: float = 0.1
    lambda_force: float = 0.1
    seed: int = 0
    tactile: bool = True


def cosine_lr(step, cfg):
    frac = step / max(1, cfg.steps - 1)
    lo = cfg.peak_lr * cfg.final_lr_ratio
    return lo + 0.5 * (cfg.peak_lr - lo) * (1 + math.cos(math.pi * frac))


def train(obs, actions_norm, cfg):
    """Adam on the weighted flow-matching loss; returns ``(model, loss_history)``."""
    rng = np.random.default_rng(cfg.seed)
    model = VelocityModel.init(cfg.family, PADDED_DIM + 1 + obs.shape[1], hidden=cfg.hidden,
                               seed=cfg.seed)
    w = loss_weights(cfg.lambda_force)
    m1 = {k: np.zeros_like(v) for k, v in model.params.items()}
    m2 = {k: np.zeros_like(v) for k, v in model.params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    history = []
    for step in range(cfg.steps):
        batch = draw_batch(obs, actions_norm, rng, cfg.batch)
        loss, grads = loss_gradient(model, batch, w)
        history.append(loss)
        lr = cosine_lr(step, cfg)
        for k, g in grads.items():
            m1[k] = b1 * m1[k] + (1 - b1) * g
            m2[k] = b2 * m2[k] + (1 - b2) * g * g
            mh = m1[k] / (1 - b1 ** (step + 1))
            vh = m2[k] / (1 - b2 ** (step + 1))
            model.params[k] -= lr * mh / (np.sqrt(vh) + eps)
    return model, np.array(history)


def sample_action(model, obs, k_steps=10, rng=None, x0=None):
    """Euler-integrate the learned velocity from noise at ``t=0`` to ``t=1``."""
    if k_steps < 1:
        raise ValueError("need at least one integration step")
    obs = np.atleast_2d(obs)
    if x0 is None:
        rng = rng if rng is not None else np.random.default_rng(0)
        x0 = rng.standard_normal((obs.shape[0], model.out_dim))
    x = np.array(x0, dtype=float, ndmin=2)
    dt = 1.0 / k_steps
    for i in range(k_steps):
        x = x + dt * model.forward(model_input(x, i * dt, obs))
    x[:, SEMANTIC_DIM:] = 0.0
    return x


# --- persistence -------------------------------------------------------------

def save_model(model, norm, path, extra=None):
    """Text header line (JSON) followed by one flat decimal weight per line."""
    names = sorted(model.params)
    header = {"schema": MODEL_SCHEMA, "family": model.family, "in_dim": model.in_dim,
              "out_dim": model.out_dim,
              "shapes": {k: list(model.params[k].shape) for k in names},
              "order": names, "normalization": norm.to_dict(), **(extra or {})}
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for k in names:
            for v in model.params[k].ravel():
                fh.write(repr(float(v)) + "\n")


def load_model(path):
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("schema") != MODEL_SCHEMA:
            raise ValueError(f"unsupported model schema {header.get('schema')!r}")
        flat = np.array([float(line) for line in fh if line.strip()])
    params, pos = {}, 0
    for k in header["order"]:
        shape = tuple(header["shapes"][k])
        n = int(np.prod(shape))
        params[k] = flat[pos:pos + n].reshape(shape)
        pos += n
    if pos != flat.size:
        raise ValueError("weight count does not match header shapes")
    n = header["normalization"]
    norm = Normalizer(FeatureStats.from_dict(n["force_feature_stats"]),
                      np.asarray(n["action_stats"]["mean"]), np.asarray(n["action_stats"]["std"]))
    return VelocityModel(header["family"], params, header["in_dim"], header["out_dim"]), norm, header


# --- closed loop ---------------------------------------------------------------

@dataclass
class Deployment:
    """How sampled actions become controller inputs.

    ``n_samples`` parallel draws are averaged per tick, force targets are
    exponentially smoothed with weight ``smoothing`` on the newest value, and
    the aperture sits ``preload`` metres inside the object so the fingers
    keep a measurable contact.
    """
    n_samples: int = 16
    smoothing: float = 0.5
    preload: float = 0.001


class FlowPolicy:
    """Force channels from the flow model; pose and aperture from the task script.

    The scripted base trajectory stands in for the visuomotor part of the
    policy, so evaluation isolates the learned force modulation.
    """

    hybrid = True

    def __init__(self, model, norm, adverb_class, seed=0, k_steps=10, tactile=True, deploy=None):
        self.deploy = deploy or Deployment()
        self.force = None
        self.model = model
        self.norm = norm
        self.adverb_class = adverb_class
        self.rng = np.random.default_rng(seed)
        self.k_steps = k_steps
        self.tactile = tactile
        self.predictions = []

    def __call__(self, obs):
        sc = obs.scenario
        o = obs_vector(self.adverb_class, obs.force_window, obs.width, obs.object_offset,
                       self.norm, self.tactile)
        d = self.deploy
        x = sample_action(self.model, np.tile(o, (d.n_samples, 1)), self.k_steps, self.rng)
        # averaging parallel draws estimates the conditional mean action
        a = self.norm.decode_action(x).mean(axis=0)
        f = np.array([max(0.0, a[3]), a[4], a[5]])
        self.force = f if self.force is None else (1 - d.smoothing) * self.force + d.smoothing * f
        t_next = obs.t + CONTROL_DT
        (x, z), _, _ = scripted_trajectory(sc, t_next)
        grip = float(self.force[0])
        self.predictions.append(grip)
        return PolicyOutput(pose=(x, z, -math.pi / 2), width=contact_width(sc, t_next, d.preload),
                            grip_force=grip, applied_force=self.force[1:].copy())


@dataclass
class ClassResult:
    adverb_class: str
    episodes: int
    successes: int
    ag: float | None
    mg: float | None
    logs: list = field(default_factory=list, repr=False)

    @property
    def sr(self):
        return self.successes / self.episodes if self.episodes else 0.0


def eval_closed_loop(model, norm, suite, episodes=2, seed=0, tactile=True, classes=("firm", "gentle"),
                     k_steps=10, hybrid_cfg=None, deploy=None):
    """Roll the policy out at 100% impedance under the hybrid controller.

    Force metrics average successful episodes only, as in the retention table.
    """
    out = {}
    for ci, cls in enumerate(classes):
        logs = []
        for ti, sc in enumerate(suite):
            sc = replace(sc, force_level=100)
            for k in range(episodes):
                s = int(seed) * 100_003 + ci * 10_000 + ti * 100 + k
                pol = FlowPolicy(model, norm, cls, seed=s, k_steps=k_steps, tactile=tactile,
                                 deploy=deploy)
                logs.append(run_episode(sc, pol, s, markers=False, hybrid_cfg=hybrid_cfg,
                                        extra_header={"adverb_class": cls, "policy": "flow",
                                                      "tactile": tactile}))
        ok = [lg for lg in logs if lg.summary["success"]]
        ag = float(np.mean([lg.summary["metrics"]["AG"] for lg in ok])) if ok else None
        mg = float(np.mean([lg.summary["metrics"]["MG"] for lg in ok])) if ok else None
        out[cls] = ClassResult(cls, len(logs), len(ok), ag, mg, logs)
    return out


def force_ratio(results):
    g, f = results["gentle"].ag, results["firm"].ag
    if g is None or not f:
        return None
    return g / f


def reference_actions(logs):
    """Per (task, class) mean of successful replay action sequences, indexed by tick."""
    cells = {}
    for log in logs:
        if log.summary["success"]:
            key = (log.header["task_id"], log.header.get("adverb_class", "firm"))
            cells.setdefault(key, []).append(np.array(action_targets(log)))
    return {k: np.mean(np.stack(v), axis=0) for k, v in cells.items()}


def aggregate_rollouts(model, norm, suite, references, seed, episodes=1, k_steps=10, hybrid_cfg=None,
                      deploy=None, tactile=True):
    """Closed-loop states of the current policy labelled with the replay demonstration.

    Only cells that have a successful reference are rolled out.
    """
    obs, act = [], []
    for ti, sc in enumerate(suite):
        sc = replace(sc, force_level=100)
        for ci, cls in enumerate(("firm", "gentle")):
            ref = references.get((sc.task_id, cls))
            if ref is None:
                continue
            for k in range(episodes):
                s = int(seed) * 7_919 + ti * 100 + ci * 10 + k
                pol = FlowPolicy(model, norm, cls, seed=s, k_steps=k_steps, tactile=tactile,
                                 deploy=deploy)
                log = run_episode(sc, pol, s, markers=False, hybrid_cfg=hybrid_cfg,
                                  extra_header={"adverb_class": cls})
                windows, widths, offsets, _ = log_arrays(log)
                n = min(len(widths), len(ref))
                obs.append(encode_obs(cls, windows[:n], widths[:n], offsets[:n], norm, tactile))
                act.append(ref[:n])
    return np.vstack(obs), np.vstack(act)


def train_policy(logs, norm, cfg, rounds=3, suite=None, augment=2, episodes=1, log_fn=None,
                 deploy=None):
    """Train on replay data, then refine with ``rounds`` of closed-loop aggregation.

    Each round rolls the current policy out under the hybrid controller and
    labels the visited states with the replay action of the same task, class
    and tick.  Returns ``(model, info)`` with per-round loss and sample counts.
    """
    suite = suite or default_suite()
    obs, act = build_training_set(logs, norm, tactile=cfg.tactile, augment=augment, seed=cfg.seed)
    refs = reference_actions(logs)
    info = {"rounds": []}
    model, hist = train(obs, norm.encode_action(act), cfg)
    info["rounds"].append({"samples": len(obs), "loss_first": float(hist[:100].mean()),
                           "loss_last": float(hist[-100:].mean())})
    if log_fn:
        log_fn(0, info["rounds"][-1])
    for r in range(rounds):
        o, a = aggregate_rollouts(model, norm, suite, refs, cfg.seed * 31 + r, episodes,
                                  deploy=deploy, tactile=cfg.tactile)
        obs, act = np.vstack([obs, o]), np.vstack([act, a])
        model, hist = train(obs, norm.encode_action(act), cfg)
        info["rounds"].append({"samples": len(obs), "loss_first": float(hist[:100].mean()),
                               "loss_last": float(hist[-100:].mean())})
        if log_fn:
            log_fn(r + 1, info["rounds"][-1])
    info["history"] = hist
    return model, info
