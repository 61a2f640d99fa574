"""
Curating clips around labeled frames
====================================

A labeled image is matched to the most similar sampled frame of any source
video, and a clip is cut around the match. A similarity threshold removes
weak matches and a stride removes near-duplicate clips from one source.
"""

from blindspot.data.curation import CurationConfig, PixelEmbedder, curate, curation_report, match_frames
from blindspot.data.synthetic import make_planted_corpus

###############################################################################
# Six long sources. Twenty labeled images are exact copies of frames on the
# one-per-second lattice; twenty more are noisy copies of arbitrary frames.

planted = make_planted_corpus(seed=0)
embedder = PixelEmbedder()
matches = match_frames(planted.images, planted.sources, embedder, period=30)

found = sum(
    (m.source_index, m.frame) == truth for m, truth in zip(matches, planted.truth) if truth is not None
)
print(f"planted frames recovered: {found}/{sum(t is not None for t in planted.truth)}")
for m, truth in list(zip(matches, planted.truth))[-3:]:
    print(f"  decoy -> source {m.source_index} frame {m.frame:4d} similarity {m.similarity:.4f}")

###############################################################################
# Four-second clips, then the same with a 0.99 threshold and a 4 s stride.

for config in (CurationConfig(min_similarity=0.0), CurationConfig(min_similarity=0.99, min_stride_s=4.0)):
    result = curate(planted.images, planted.sources, embedder, config)
    print(f"threshold {config.min_similarity:<4} stride {config.min_stride_s:<3} -> {len(result.entries)} clips")

###############################################################################
# Counts over a grid of settings only ever fall as either filter tightens.

settings = [(length, s, t) for length in ("4s", "68f") for s in (0.0, 0.99, 0.999) for t in (0.0, 2.0, 4.0)]
print("\nlength  sim   stride  clips")
for length, s, t, n in curation_report(matches, planted.images, planted.sources, settings):
    print(f"{length:>6}  {s:<4}  {t:<6}  {n}")
