"""Debug: overfit 8 distinct image-caption pairs with no crop randomness."""

import time

import numpy as np

from bilip.autodiff import Tensor
from bilip.bpe import train_bpe, encode
from bilip.contrastive import (DualEncoderModel, TrainConfig, contrastive_loss,
                               cosine_similarity_matrix)
from bilip.encoders import TextEncoderConfig, VisionEncoderConfig
from bilip.imaging import bilinear_resize
from bilip.optim import AdamW, cosine_schedule
from bilip.toydata import generate_toy_dataset

data = generate_toy_dataset(8, 1, seed=0)  # one image per concept
captions = [r.caption for r in data.records if r.language == "synthetic-A"]
print("captions:", captions)
vocab = train_bpe(captions, target_vocab=290)

MAX_LEN = 16
vcfg = VisionEncoderConfig(patch_size=8, image_size=32, width=64, layers=2,
                           heads=4, embed_dim=64)
tcfg = TextEncoderConfig(vocab_size=vocab.vocab_size, layers=2, width=64,
                         heads=4, max_len=MAX_LEN, embed_dim=64)
model = DualEncoderModel(vcfg, tcfg, np.random.default_rng(0))

images = np.stack([bilinear_resize(img, 32, 32) for img in data.images])
seqs = [encode(c, vocab, MAX_LEN) for c in captions]

optimizer = AdamW(list(model.named_parameters()), lr=1e-3, weight_decay=0.01)
t0 = time.time()
for step in range(300):
    model.zero_grad()
    img = model.vision(images)
    txt = model.text.encode_sequences(seqs)
    loss = contrastive_loss(img, txt, model.temperature)
    loss.backward()
    optimizer.lr = cosine_schedule(1e-3, step, 300, 20)
    optimizer.step()
    model.temperature.clamp_()
    if step % 30 == 0 or step == 299:
        sim = cosine_similarity_matrix(img, txt).data
        acc = (sim.argmax(axis=1) == np.arange(8)).mean()
        print(f"step {step:3d} loss {loss.item():.4f} tau {model.temperature.tau:.4f} "
              f"diag-acc {acc:.2f} sim-diag {np.diag(sim).mean():.3f} "
              f"sim-off {sim[~np.eye(8, dtype=bool)].mean():.3f}")
print(f"{time.time()-t0:.1f}s")
