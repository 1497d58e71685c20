"""Round loop: local updates, scheduling, aggregation, weight learning, timing.

One round runs, in order: channel realization, local SGD on every device,
download/compute latency accounting, per-block upload scheduling, uploads,
weighted aggregation into per-device server-side models, aggregation-weight
updates from the previous round's retained material, cache refresh, and
downloads back to the scheduled devices. Rounds are synchronous: the round
wall time is the slowest device's download + compute + upload.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import aggregation as agg
from . import datagen, nn_core, scheduler, wireless
from .config import RunConfig, config_to_dict
from .errors import FmmlError
from .nn_core import ArchSpec, MultiModalParams, ParamBlock

THREADS_ENV = "FMML_SIM_THREADS"


@dataclass
class DeviceState:
    device_id: int
    params: MultiModalParams
    dataset: datagen.DeviceDataset
    compute: wireless.ComputeParams
    distance: float
    rng: np.random.Generator
    flops: dict[int, int] = field(default_factory=dict)


@dataclass
class ServerState:
    personalized: dict[int, MultiModalParams]
    coeffs: agg.CoefficientState | None
    cache: agg.GradCache
    schedule: scheduler.ScheduleState
    round: int = 0


@dataclass
class RoundLog:
    round: int
    gains: np.ndarray
    t_download: np.ndarray
    t_compute: np.ndarray
    t_upload: np.ndarray
    round_time: float
    scheduled: dict[int, np.ndarray]
    staleness: dict[int, np.ndarray]
    metric_values: dict[int, dict[int, float]]
    train_loss: np.ndarray
    test_accuracy: np.ndarray
    mean_accuracy: float
    weight_rows_used: list[tuple[int, int, np.ndarray, np.ndarray]]
    coeff_snapshot: dict[int, tuple[np.ndarray, np.ndarray]] | None


@dataclass
class RunResult:
    config: RunConfig
    logs: list[RoundLog]
    summary: dict
    server: ServerState
    devices: list[DeviceState]


def local_update_phase(arch: ArchSpec, device: DeviceState, lr: float,
                       local_iters: int, batch_size: int,
                       prox_mu: float = 0.0,
                       anchor: MultiModalParams | None = None) -> tuple[MultiModalParams, float]:
    """Run the device's local SGD steps for one round.

    Batches cycle through a fresh shuffle of the train split. With a positive
    prox_mu the gradient gains mu * (w - anchor), pulling the iterates back
    toward the round-start parameters.
    """
    train = device.dataset.train
    n = len(train)
    perm = device.rng.permutation(n)
    params = device.params
    losses = []
    for i in range(local_iters):
        idx = perm[np.arange(i * batch_size, (i + 1) * batch_size) % n]
        feats = {m: train.features[m][idx] for m in device.dataset.owned}
        loss, grad = nn_core.loss_and_grad(arch, params, feats, train.labels[idx])
        if prox_mu > 0.0 and anchor is not None:
            blocks = {b: ParamBlock(
                b, grad.blocks[b].values + prox_mu * (params.blocks[b].values - anchor.blocks[b].values),
                grad.blocks[b].shapes) for b in grad.blocks}
            grad = MultiModalParams(blocks, grad.owned)
        params = nn_core.sgd_step(params, grad, lr)
        losses.append(loss)
    return params, float(np.mean(losses))


def evaluate_personalized(arch: ArchSpec, devices: Sequence[DeviceState]) -> tuple[np.ndarray, float]:
    """Accuracy of each device's current model on its own test split."""
    accs = np.zeros(len(devices))
    for i, dev in enumerate(devices):
        test = dev.dataset.test
        scores = nn_core.forward_batch(arch, dev.params, test.features)
        accs[i] = float((scores.argmax(axis=1) == test.labels).mean())
    return accs, float(accs.mean())


def simulated_training_time(logs: Sequence[RoundLog]) -> float:
    """Total simulated wall time: sum of per-round synchronous barriers."""
    return float(sum(log.round_time for log in logs))


def _worker_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


class Simulation:
    """Owns all run state; `step()` advances one global round."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.arch = ArchSpec(
            input_dims=tuple(cfg.data.input_dims),
            encoder_hidden=cfg.arch.encoder_hidden,
            feature_len=cfg.arch.feature_len,
            classifier_hidden=tuple(cfg.arch.classifier_hidden),
            num_classes=cfg.data.num_classes)
        self.link = wireless.LinkParams(
            bandwidth_hz=cfg.link.bandwidth_hz, noise_density=cfg.link.noise_density,
            device_power_w=cfg.link.device_power_w, server_power_w=cfg.link.server_power_w,
            carrier_ghz=cfg.link.carrier_ghz)
        self.quota = cfg.effective_quota()
        self.metric = scheduler.MetricSpec(cfg.metric, cfg.alpha)

        seq = np.random.SeedSequence(cfg.seed)
        data_ss, init_ss, place_ss, channel_ss, sched_ss, dev_ss, hw_ss = seq.spawn(7)
        data_rng = np.random.default_rng(data_ss)
        self.rng_channel = np.random.default_rng(channel_ss)
        self.rng_sched = np.random.default_rng(sched_ss)

        profile = cfg.modality_profile or datagen.default_modality_profile(
            cfg.num_devices, cfg.num_modalities)
        owned_sets = datagen.assign_modalities(cfg.num_devices, cfg.num_modalities, profile)
        means = datagen.make_class_means(
            data_rng, cfg.data.num_classes, cfg.data.input_dims, cfg.data.mean_separation)
        self.data_spec = datagen.SyntheticSpec(
            num_classes=cfg.data.num_classes, input_dims=tuple(cfg.data.input_dims),
            class_means=means, noise_std=cfg.data.noise_std,
            samples_per_device=cfg.data.samples_per_device,
            train_fraction=cfg.data.train_fraction)
        scheme = datagen.PartitionScheme(cfg.partition)
        datasets = []
        for k in range(cfg.num_devices):
            labels = datagen.partition_labels(
                scheme, cfg.data.num_classes, cfg.data.samples_per_device, data_rng)
            datasets.append(datagen.generate_device_data(
                self.data_spec, labels, owned_sets[k], k, data_rng))

        self.distances = wireless.place_devices(
            np.random.default_rng(place_ss), cfg.num_devices, cfg.link.cell_radius_m)
        full = nn_core.init_full_params(self.arch, np.random.default_rng(init_ss))
        shared = self.arch.shared_block_id
        # log-uniform slowdown in [1, heterogeneity] per device
        hw_rng = np.random.default_rng(hw_ss)
        slowdown = np.exp(hw_rng.uniform(0.0, np.log(cfg.compute.heterogeneity),
                                         size=cfg.num_devices)) if cfg.compute.heterogeneity > 1 \
            else np.ones(cfg.num_devices)
        dev_rngs = [np.random.default_rng(s) for s in dev_ss.spawn(cfg.num_devices)]
        self.devices = [DeviceState(
            device_id=k,
            params=nn_core.slice_device_params(full, owned_sets[k], shared),
            dataset=datasets[k],
            compute=wireless.ComputeParams(
                cycles_per_s=cfg.compute.cycles_per_s / float(slowdown[k]),
                flops_per_cycle=cfg.compute.flops_per_cycle,
                local_iters=cfg.local_iters),
            distance=float(self.distances[k]),
            rng=dev_rngs[k],
            flops=nn_core.flops_per_iteration(self.arch, owned_sets[k], cfg.batch_size),
        ) for k in range(cfg.num_devices)]

        coeffs = None
        if cfg.algorithm == "proposed":
            coeffs = agg.init_coeffs(owned_sets, cfg.num_modalities, cfg.coeff_lr)
        self.owners = {m: np.array([m in set(s) for s in owned_sets], dtype=bool)
                       for m in range(1, cfg.num_modalities + 1)}
        self.owners[shared] = np.ones(cfg.num_devices, dtype=bool)
        self.block_ids = sorted(self.owners)
        self.sizes_bits = {b: nn_core.param_size_bits(full[b]) for b in self.block_ids}
        self.server = ServerState(
            personalized={k: nn_core.slice_device_params(full, owned_sets[k], shared)
                          for k in range(cfg.num_devices)},
            coeffs=coeffs,
            cache={},
            schedule=scheduler.new_schedule_state(
                cfg.num_devices, self.block_ids, self.quota, cfg.staleness_threshold))

    # ----------------------------- one round -----------------------------

    def _device_blocks(self, k: int) -> tuple[int, ...]:
        return (*self.devices[k].dataset.owned, self.arch.shared_block_id)

    def _self_weights(self) -> dict[int, np.ndarray]:
        cfg, K = self.cfg, self.cfg.num_devices
        out = {}
        for b in self.block_ids:
            row = np.zeros(K)
            if cfg.algorithm == "proposed":
                for k in np.flatnonzero(self.owners[b]):
                    row[k] = agg.softmax_row(self.server.coeffs.raw[b][k], self.owners[b])[k]
            else:
                # neutral value: what a uniform weight row would give
                row[self.owners[b]] = 1.0 / int(self.owners[b].sum())
            out[b] = row
        return out

    def step(self) -> RoundLog:
        cfg = self.cfg
        K = cfg.num_devices
        t = self.server.round + 1
        channel = wireless.sample_round_gains(
            self.rng_channel, self.distances, self.link.carrier_ghz, t)

        # local updates (independent per device; optional thread pool)
        def update(dev: DeviceState):
            anchor = dev.params if cfg.algorithm == "fedprox" else None
            mu = cfg.fedprox_mu if cfg.algorithm == "fedprox" else 0.0
            return local_update_phase(self.arch, dev, cfg.lr, cfg.local_iters,
                                      cfg.batch_size, prox_mu=mu, anchor=anchor)

        workers = _worker_count()
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(update, self.devices))
        else:
            results = [update(dev) for dev in self.devices]
        train_loss = np.zeros(K)
        for dev, (params, loss) in zip(self.devices, results):
            dev.params = params
            train_loss[dev.device_id] = loss

        # latency inputs for this round
        down_rates = np.array([wireless.link_rate(
            self.link.server_power_w, g, self.link.bandwidth_hz, self.link.noise_density)
            for g in channel.gains])
        up_rates = np.array([wireless.link_rate(
            self.link.device_power_w, g, self.link.bandwidth_hz, self.link.noise_density)
            for g in channel.gains])
        t_down = np.zeros(K)
        t_cmp = np.zeros(K)
        for k in range(K):
            prev = {b: int(self.server.schedule.indicators[b][k])
                    for b in self._device_blocks(k)}
            t_down[k] = wireless.download_latency(prev, self.sizes_bits, float(down_rates[k]))
            t_cmp[k] = wireless.compute_latency(self.devices[k].compute, self.devices[k].flops)

        # scheduling
        if cfg.algorithm == "local":
            indicators = {b: np.zeros(K, dtype=np.int8) for b in self.block_ids}
            staleness = {b: self.server.schedule.staleness[b].copy() for b in self.block_ids}
            metric_values: dict[int, dict[int, float]] = {b: {} for b in self.block_ids}
        else:
            selection = "metric"
            if cfg.algorithm != "proposed" and cfg.baseline_scheduler == "random":
                selection = "random"
            indicators, staleness, metric_values = scheduler.schedule_round(
                self._self_weights(), t_down, t_cmp, self.sizes_bits, up_rates,
                self.owners, self.metric, self.server.schedule.staleness, self.quota,
                cfg.staleness_threshold, selection=selection, rng=self.rng_sched)

        # uploads of scheduled blocks (post-local-update values)
        uploads: dict[int, dict[int, ParamBlock]] = {}
        for b in self.block_ids:
            uploads[b] = {int(k): self.devices[int(k)].params.blocks[b]
                          for k in np.flatnonzero(indicators[b])}

        # aggregation into per-device server models
        new_blocks: dict[tuple[int, int], ParamBlock] = {}
        new_cache: agg.GradCache = {}
        rows_used: list[tuple[int, int, np.ndarray, np.ndarray]] = []
        for b in self.block_ids:
            if not uploads[b]:
                continue
            mask = agg.build_round_mask(indicators[b], self.owners[b])
            if cfg.algorithm == "proposed":
                for k in sorted(uploads[b]):
                    soft = agg.softmax_row(self.server.coeffs.raw[b][k], self.owners[b])
                    row = agg.masked_renormalize(soft, mask[k])
                    block = agg.aggregate(row, uploads[b])
                    jac = agg.coeff_jacobian(self.server.coeffs.raw[b][k], mask[k], self.owners[b])
                    new_cache[(k, b)] = agg.CacheEntry(
                        weight_row=row, jacobian=jac,
                        uploads={k2: uploads[b][k2].values
                                 for k2 in sorted(uploads[b]) if mask[k][k2]},
                        aggregated=block.values)
                    rows_used.append((b, k, row, mask[k].astype(np.int8)))
                    new_blocks[(k, b)] = block
            else:
                # plain unweighted mean over this round's uploaders
                ks = sorted(uploads[b])
                total = np.zeros_like(uploads[b][ks[0]].values)
                for k2 in ks:
                    total += uploads[b][k2].values
                mean_block = ParamBlock(b, total / len(ks), uploads[b][ks[0]].shapes)
                for k in ks:
                    new_blocks[(k, b)] = mean_block

        # aggregation-weight update from the previous round's retained material
        if cfg.algorithm == "proposed" and cfg.coeff_lr > 0.0:
            grads: dict[tuple[int, int], np.ndarray] = {}
            for (k, b), entry in self.server.cache.items():
                if not indicators[b][k]:
                    continue  # no fresh upload, no delta to learn from
                w_prev = ParamBlock(b, entry.aggregated, uploads[b][k].shapes)
                est = agg.estimate_block_gradient(
                    w_prev, uploads[b][k], cfg.lr, cfg.local_iters,
                    mode=cfg.gradient_estimate)
                grads[(k, b)] = agg.coeff_grad(entry, est)
            if grads:
                agg.coeff_update(self.server.coeffs, grads)
        if cfg.algorithm == "proposed":
            self.server.cache = new_cache

        # install aggregated blocks and push them back to scheduled devices
        for (k, b), block in new_blocks.items():
            self.server.personalized[k].blocks[b] = block
            self.devices[k].params.blocks[b] = ParamBlock(b, block.values.copy(), block.shapes)

        # realized upload time: all blocks the device shipped this round
        t_up = np.zeros(K)
        for k in range(K):
            bits = sum(self.sizes_bits[b] for b in self.block_ids if indicators[b][k])
            t_up[k] = bits / up_rates[k] if bits else 0.0
        round_time = float((t_down + t_cmp + t_up).max())

        self.server.schedule.indicators = indicators
        self.server.schedule.staleness = staleness
        self.server.round = t

        accs, mean_acc = evaluate_personalized(self.arch, self.devices)
        snapshot = None
        if cfg.algorithm == "proposed":
            snapshot = {b: (self.server.coeffs.raw[b].copy(),
                            agg.effective_rows(self.server.coeffs, b))
                        for b in self.block_ids}
        return RoundLog(
            round=t, gains=channel.gains, t_download=t_down, t_compute=t_cmp,
            t_upload=t_up, round_time=round_time, scheduled=indicators,
            staleness=staleness, metric_values=metric_values, train_loss=train_loss,
            test_accuracy=accs, mean_accuracy=mean_acc,
            weight_rows_used=rows_used, coeff_snapshot=snapshot)

    # ----------------------------- full run -----------------------------

    def run(self) -> RunResult:
        logs = [self.step() for _ in range(self.cfg.rounds)]
        if logs:
            accs, mean_acc = logs[-1].test_accuracy, logs[-1].mean_accuracy
        else:
            accs, mean_acc = evaluate_personalized(self.arch, self.devices)
        summary = {
            "seed": self.cfg.seed,
            "algo": self.cfg.algorithm,
            "mean_personalized_accuracy": float(mean_acc),
            "total_simulated_time_s": simulated_training_time(logs),
            "rounds": len(logs),
            "per_device_accuracy": [float(a) for a in accs],
            "label_supports": [list(map(int, d.dataset.label_support)) for d in self.devices],
            "owned_modalities": [list(d.dataset.owned) for d in self.devices],
            "config": config_to_dict(self.cfg),
        }
        return RunResult(self.cfg, logs, summary, self.server, self.devices)


def run_training(cfg: RunConfig) -> RunResult:
    """Build a simulation from the config and run it to completion."""
    try:
        return Simulation(cfg).run()
    except FmmlError:
        raise
    except (ValueError, KeyError) as exc:
        raise FmmlError(f"run aborted: {exc}") from exc
