"""Smoke test for the nvcnet_py extension.

Build and install first:
    maturin develop --release -m crates/py/Cargo.toml
then run:
    python python/smoke_test.py
"""

import math
import os
import tempfile

import nvcnet_py as nv

CONFIG = """
[data]
kind = "synthetic"
clips = 4
length = 16384
seed = 3

[train]
batch_size = 2
clip_length = 8192
"""


def tone(n, f, amp=0.4):
    return [amp * math.sin(2 * math.pi * f * i / 22050) for i in range(n)]


def main():
    counts = nv.parameter_counts("full", 109)
    assert 13_500_000 <= counts["conversion_total"] <= 16_600_000, counts
    assert nv.kl([0.0] * 8, [1.0] * 8) == 0.0

    model = nv.Model("micro", 2, 0)
    x = tone(1000, 220.0)
    code = model.content_encode(x[:512])
    assert len(code) == 4 and len(code[0]) == 2
    for j in range(2):
        norm = math.sqrt(sum(code[i][j] ** 2 for i in range(4)))
        assert abs(norm - 1.0) < 1e-5, norm
    y = model.convert(x, [0.0] * model.d_spk)
    assert len(y) == 768  # 1000 cropped to a multiple of 256

    trainer = nv.Trainer(CONFIG)
    losses = trainer.step()
    for key in ("d_total", "g_total", "rec", "con", "kl"):
        assert math.isfinite(losses[key]), (key, losses)
    assert trainer.step_count == 1

    with tempfile.TemporaryDirectory() as tmp:
        ckpt = os.path.join(tmp, "run.ckpt")
        trainer.save(ckpt)
        src = os.path.join(tmp, "src.wav")
        ref = os.path.join(tmp, "ref.wav")
        out = os.path.join(tmp, "out.wav")
        emb = os.path.join(tmp, "voice.emb")
        nv.save_wav(tone(10000, 220.0), src)
        nv.save_wav(tone(12000, 110.0), ref)
        assert len(nv.load_wav(src)) == 10000

        z = nv.embed_files(ckpt, [ref], emb)
        assert len(z) == 128
        n = nv.convert_file(ckpt, src, out, target="emb", reference=emb)
        assert n == 9984 and len(nv.load_wav(out)) == 9984

        resumed = nv.Trainer(CONFIG, checkpoint=ckpt)
        assert resumed.step_count == 1
        assert resumed.step() == trainer.step()

        try:
            nv.load_wav(os.path.join(tmp, "missing.wav"))
        except OSError:
            pass
        else:
            raise AssertionError("missing file should raise")

    print("smoke test passed")


if __name__ == "__main__":
    main()
