"""Calibration scratch: full toy pipeline at desk scale, timed."""

import time

import numpy as np

from bilip.bpe import train_bpe, encode
from bilip.contrastive import DualEncoderModel, TrainConfig, train
from bilip.encoders import TextEncoderConfig, VisionEncoderConfig
from bilip.evaluation import (LabelSet, crosslingual_heatmap, embed_images,
                              embed_texts, retrieval_eval, zeroshot_classify)
from bilip.mae import MAEConfig, export_encoder, pretrain
from bilip.imaging import random_resized_crop
from bilip.toydata import generate_toy_dataset

t0 = time.time()

SEED = 0
data = generate_toy_dataset(8, 64, seed=SEED)
print(f"[{time.time()-t0:6.1f}s] dataset: {data.num_images} images, {len(data.records)} records")

captions = [r.caption for r in data.records]
vocab = train_bpe(captions, target_vocab=400)
print(f"[{time.time()-t0:6.1f}s] vocab {vocab.vocab_size}")

MAX_LEN = 16
EMBED = 64
vcfg = VisionEncoderConfig(patch_size=8, image_size=32, width=64, layers=2,
                           heads=4, embed_dim=EMBED)
tcfg = TextEncoderConfig(vocab_size=vocab.vocab_size, layers=2, width=64,
                         heads=4, max_len=MAX_LEN, embed_dim=EMBED)

mcfg = MAEConfig(mask_ratio=0.75, decoder_layers=4, learning_rate=1.5e-3,
                 weight_decay=0.05, batch_size=64, warmup_steps=40, epochs=40)

def augment(batch, rng):
    out = np.empty((batch.shape[0], 32, 32, 3))
    for i, img in enumerate(batch):
        out[i] = random_resized_crop(img, 32, (0.2, 1.0), rng)
    return out

mae_model, mae_metrics = pretrain(data.images, vcfg, mcfg, seed=SEED, augment=augment)
print(f"[{time.time()-t0:6.1f}s] MAE {len(mae_metrics)} steps: "
      f"loss {mae_metrics[0]['loss']:.4f} -> {mae_metrics[-1]['loss']:.4f}")

model = DualEncoderModel(vcfg, tcfg, np.random.default_rng(SEED))
exported = export_encoder(mae_model)
model.vision.load_state_dict({k.removeprefix('encoder.'): v for k, v in exported.items()})

seqs = [encode(c, vocab, MAX_LEN) for c in captions]
pair_image_idx = np.repeat(np.arange(data.num_images), 2)
pair_images = data.images[pair_image_idx]

tcfg_run = TrainConfig(learning_rate=2e-3, weight_decay=0.1, batch_size=64,
                       warmup_steps=50, epochs=35, number_of_multicrop=1,
                       global_size=32, local_size=16)
metrics = train(model, pair_images, seqs, tcfg_run, seed=SEED)
print(f"[{time.time()-t0:6.1f}s] train {len(metrics)} steps: "
      f"loss {metrics[0]['loss']:.4f} -> {metrics[-1]['loss']:.4f} tau {metrics[-1]['tau']:.4f}")

# eval on the generated images at model resolution (32): center-crop from 64
from bilip.pipeline import prepare_eval_image
eval_images = np.stack([prepare_eval_image(img, 32) for img in data.images])

for language, labels in (("synthetic-A", data.labels_a), ("synthetic-B", data.labels_b)):
    preds, _ = zeroshot_classify(eval_images, LabelSet(labels, language), model, vocab)
    acc = float((preds == data.concept_ids).mean())
    print(f"[{time.time()-t0:6.1f}s] zero-shot {language}: {acc:.4f}")

heat = crosslingual_heatmap(data.labels_a, data.labels_b, model, vocab)
print(f"[{time.time()-t0:6.1f}s] heatmap diagonal hits: {heat.diagonal_hit_rate*8:.0f}/8")

img_feats = embed_images(model, eval_images)
for language in ("synthetic-A", "synthetic-B"):
    keep = [i for i, r in enumerate(data.records) if r.language == language]
    txt_feats = embed_texts(model, vocab, [data.records[i].caption for i in keep])
    gt = {}
    for col, i in enumerate(keep):
        gt.setdefault(int(pair_image_idx[i]), []).append(col)
    res = retrieval_eval(img_feats, txt_feats, gt, ks=(1, 5, 10))
    chance = 100.0 / data.num_images
    print(f"[{time.time()-t0:6.1f}s] retrieval {language}: "
          f"t2i R@1 {res['text_to_image'].recall_at[1]:.2f}% (chance {chance:.2f}%) "
          f"i2t R@1 {res['image_to_text'].recall_at[1]:.2f}%")

print(f"total {time.time()-t0:.1f}s")
