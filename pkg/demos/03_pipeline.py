"""
End-to-end pipeline on a toy dataset
====================================

The same steps as the command line (generate, precompute, vectorize-fit,
train, evaluate) on a dataset small enough to run in a minute or two.
Models are shrunk and trained for few epochs, so the scores only show the
mechanics, not the achievable accuracy.
"""
import tempfile

from swarmtopo import pipeline as pl
from swarmtopo.model import TrainConfig

root = tempfile.mkdtemp(prefix="swarmtopo-demo-")
pl.cmd_generate(root, "dorsogna1k", 20, n_points=30, steps=400, stride=10)
print(pl.cmd_precompute(root))
pl.cmd_vectorize_fit(root, [0])

small = {"latent_dim": 8, "n_ref": 8, "embed_dim": 16, "attn_dim": 16, "enc_hidden": 32,
         "ode_hidden": 32, "dec_hidden": 32, "reg_width": 16, "euler_steps": 20}
tc = TrainConfig(epochs=20, batch_size=8, lr=3e-3)
for variant in ("v1", "baseline"):
    pl.cmd_train(root, variant, [0], [0.8], model_overrides=small, train_config=tc)

pl.cmd_evaluate(root, crocker=True, splits=[0])
print(open(f"{root}/reports/summary.txt").read())
print("artifacts in", root)
