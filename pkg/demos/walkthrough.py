"""Follow one AGC telemetry stream from the control loop to a verdict.

Run with: python3 demos/walkthrough.py
"""

import warnings

import numpy as np

from flowsense.detector import Hyper, ModelSpec, build_model, predict, train
from flowsense.encoding import UnknownTokenWarning, fit_normalizer, load_schema, to_image
from flowsense.flows import FeatureExtractor, iter_flows, rate_series
from flowsense.metrics import confusion, rounded_metrics
from flowsense.pipeline import encode_table
from flowsense.traffic_sim import (
    AgcConfig, AttackSpec, NetProfile, emit_telemetry, inject_attack, simulate_agc,
)
from flowsense.wavelet import frequency_features, subband_energies, wp_decompose


def main():
    # 1. two-area load-frequency control with a 0.02 p.u. load step in area 1
    states = simulate_agc(AgcConfig(load_steps=((20.0, 1, 0.02),), load_sigma=0.005), horizon=240.0, seed=1)
    dip = min(s.df1 for s in states)
    print(f"AGC: {len(states)} steps, area-1 frequency dip {dip * 1000:.1f} mHz, "
          f"final df1 {states[-1].df1 * 1000:.2f} mHz")

    # 2. IEC 104 style telemetry: measurements every 0.1 s, setpoints every 4 s
    packets = emit_telemetry(states, NetProfile(jitter=0.003), seed=2)
    print(f"telemetry: {len(packets)} packets, sizes {min(p.length for p in packets)}-"
          f"{max(p.length for p in packets)} bytes")

    # 3. a port scan and a false-data injection in separate windows
    packets = inject_attack(packets, AttackSpec("scan", 60.0, 80.0, 1.0), seed=3)
    packets = inject_attack(packets, AttackSpec("fdia", 150.0, 200.0, 1.0), seed=4)
    n_bad = sum(p.label == "anomalous" for p in packets)
    print(f"after injection: {len(packets)} packets, {n_bad} anomalous")

    # 4. flows, rate series and wavelet-packet band energies
    flows = list(iter_flows(packets))
    longest = max(flows, key=lambda f: f.last_ts - f.first_ts)
    series = rate_series(longest)
    energies = subband_energies(wp_decompose(series, 3))
    print(f"flows: {len(flows)}; longest lasts {longest.last_ts - longest.first_ts:.1f} s")
    print("  band energy shares:", np.round(energies / energies.sum(), 3).tolist())
    print("  frequency features:", np.round(frequency_features(series), 3).tolist())

    # 5. 39 features per flow -> 130-dim vector -> 12x12 image
    ex = FeatureExtractor()
    vectors = [ex.push(f) for f in flows]
    schema = load_schema()
    calib = fit_normalizer(vectors, schema)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnknownTokenWarning)
        ds = encode_table(vectors, schema, calib)
    img = to_image(ds.x[0])
    print(f"encoded {len(ds)} flows ({int(ds.y.sum())} anomalous); image {img.shape}, "
          f"{int((img > 0).sum())} lit pixels")

    # 6. a small split-attention model trained and scored on these flows
    spec = ModelSpec(arch="resnest", seed=5, hyper=Hyper(epochs=40, batch_size=16))
    model = build_model(spec, schema.hash)
    hist = train(model, ds, spec)
    x = model.prepare(ds.x)
    preds = [predict(model, xi)[0] for xi in x]
    acc, fpr, dr = rounded_metrics(confusion(preds, ds.y))
    print(f"resnest after {len(hist.epochs)} epochs: loss {hist.loss[-1]:.3f}; "
          f"in-sample ACC {acc}% FPR {fpr}% DR {dr}%")


if __name__ == "__main__":
    main()
