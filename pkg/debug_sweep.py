"""Debug: which knobs avoid the collapse saddle on the 8-pair overfit task."""

import numpy as np

from bilip.bpe import train_bpe, encode
from bilip.contrastive import DualEncoderModel, contrastive_loss, cosine_similarity_matrix
from bilip.encoders import TextEncoderConfig, VisionEncoderConfig
from bilip.imaging import bilinear_resize
from bilip.optim import AdamW, cosine_schedule
from bilip.toydata import generate_toy_dataset

data = generate_toy_dataset(8, 1, seed=0)
captions = [r.caption for r in data.records if r.language == "synthetic-A"]
vocab = train_bpe(captions, target_vocab=290)
MAX_LEN = 16
images = np.stack([bilinear_resize(img, 32, 32) for img in data.images])
seqs = [encode(c, vocab, MAX_LEN) for c in captions]


def run(tag, lr, wd, warmup, steps=300, rescale=None, tau=0.07):
    vcfg = VisionEncoderConfig(patch_size=8, image_size=32, width=64, layers=2,
                               heads=4, embed_dim=64)
    tcfg = TextEncoderConfig(vocab_size=vocab.vocab_size, layers=2, width=64,
                             heads=4, max_len=MAX_LEN, embed_dim=64)
    model = DualEncoderModel(vcfg, tcfg, np.random.default_rng(0), initial_tau=tau)
    if rescale:
        # inflate inner-linear weights toward 1/sqrt(width)-scale inits
        for name, p in model.named_parameters():
            if p.data.ndim == 2 and any(s in name for s in
                                        ("qkv", "proj.weight", "fc1", "fc2")):
                p.data *= rescale
            if name.endswith((".proj",)) or name == "vision.proj" or name == "text.proj":
                p.data *= rescale
    optimizer = AdamW(list(model.named_parameters()), lr=lr, weight_decay=wd)
    for step in range(steps):
        model.zero_grad()
        img = model.vision(images)
        txt = model.text.encode_sequences(seqs)
        loss = contrastive_loss(img, txt, model.temperature)
        loss.backward()
        optimizer.lr = cosine_schedule(lr, step, steps, warmup)
        optimizer.step()
        model.temperature.clamp_()
    sim = cosine_similarity_matrix(model.vision(images),
                                   model.text.encode_sequences(seqs)).data
    acc = (sim.argmax(axis=1) == np.arange(8)).mean()
    spread = sim.std()
    print(f"{tag:34s} loss {loss.item():.4f} acc {acc:.2f} "
          f"sim-spread {spread:.3f} tau {model.temperature.tau:.4f}")


run("baseline lr1e-3 wd.01 wu20", 1e-3, 0.01, 20)
run("low-lr 3e-4 wu50", 3e-4, 0.01, 50)
run("no-wd lr1e-3", 1e-3, 0.0, 20)
run("rescale-init x6 lr1e-3", 1e-3, 0.01, 20, rescale=6.0)
run("rescale-init x6 lr3e-4", 3e-4, 0.01, 50, rescale=6.0)
run("tau 0.2 lr1e-3", 1e-3, 0.01, 20, tau=0.2)
run("tau 1.0 lr1e-3", 1e-3, 0.01, 20, tau=1.0)
