"""FRF model versus hybrid-2 on the simulated hysteretic rig.

The FRF is fitted on noise; the hybrid-2 LSTM sees the drive plus the FRF
prediction and learns what the linear model misses. Both are scored on a
service-load shape held out from training and model selection.
"""

import sys

from hybrid_sysid import lstm, synth
from hybrid_sysid.pipeline import HybridPredictor, WindowingConfig, channel_mean_rms, fit_predictor
from hybrid_sysid.spectral import estimate_frf

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 40
rig = synth.RigPlant()
spec = synth.NoiseSpec(duration=60, sample_rate=200.0, mean_range=(-1.5, 1.5), amplitude_range=(1.0, 4.0))


def files(kind, count, label, **kw):
    drives = [d[0] for d in synth.make_drives(kind, count, synth.derive_seed(seed, label), spec, synth.DRIVE, **kw)]
    return [a.concat_channels(b) for a, b in zip(drives, rig.respond(drives))]


outputs = synth.DISP + synth.FORCE
train = files("noise", 10, "train")
loads = files("serviceload", 6, "loads", scales=[0.3, 0.65, 1.0, 1.0, 0.3, 0.65])
validation = [s for i, s in enumerate(loads) if i % 3 != 2]
test = [s for i, s in enumerate(loads) if i % 3 == 2]

xs = [s.select(synth.DRIVE) for s in train]
ys = [s.select(outputs) for s in train]
frf = estimate_frf(xs, ys, 512)
frf_only = HybridPredictor("frf", synth.DRIVE, outputs, WindowingConfig(), frf=frf)
result = fit_predictor("hybrid2", xs, ys, frf, WindowingConfig(), (39,),
                       lstm.TrainConfig(1e-3, epochs, 32, seed=seed), validation=validation,
                       callback=lambda e, loss: print(f"epoch {e + 1:3d}  loss {loss:.5f}") if e % 10 == 9 else None)
print(f"selected epoch {result.best_epoch + 1}")
for name, model in (("frf", frf_only), ("hybrid2", result.predictor)):
    print(f"{name:8s} test rms {channel_mean_rms(model, test):.3f}")
