"""Prompt assembly, caption generation, and rubric judging, end to end.

The offline provider stands in for a multimodal model: captions come out
deterministic, and the judge scores each rubric dimension in its own call so
no dimension gets lost in the middle of a long grading prompt.

Run:  python3 demos/04_captioning_and_judge.py
"""

import numpy as np

from minelens.captioning import (
    CaptionConfig,
    ImagePayload,
    build_prompt,
    generate_caption,
    load_exemplars,
)
from minelens.judge import GatePolicy, evaluate, load_rubric
from minelens.providers import MockProvider
from minelens.raster import RenderImage
from minelens.sites import Dossier, SiteRecord

SITE = SiteRecord(
    site_id="Gove1971",
    name="Gove Bauxite Operation",
    country="Australia",
    lat=-12.26,
    lon=136.83,
    commodity=["bauxite"],
)

DOSSIER = Dossier(
    site_id="Gove1971",
    history=(
        "Bauxite extraction began on the Gove peninsula in 1971 after a federal "
        "lease override of native title claims. The associated refinery ran "
        "until 2014; mining continues for export."
    ),
    geology=(
        "Lateritic bauxite plateau over Proterozoic basement, with ore horizons "
        "two to four meters thick under a thin ferricrete cap."
    ),
    controversies=(
        "The lease was granted over the objections of the Yolngu traditional "
        "owners, whose bark petitions and the Milirrpum case became landmarks "
        "of the land rights movement."
    ),
    sources=["site-archive"],
)


def synthetic_render(seed: int, tag: str) -> RenderImage:
    rng = np.random.default_rng(seed)
    px = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
    return RenderImage(pixels=px, provenance=tag)


def main() -> None:
    config = CaptionConfig(multi_shot=True, word_cap=250)
    bundle = build_prompt(SITE, DOSSIER, load_exemplars(), config)
    print("system prompt sections:")
    for line in bundle.system_prompt.splitlines():
        if line.startswith("## "):
            print(f"  {line[3:]}")
    print(f"\nquery: {bundle.query}")

    payload = ImagePayload(
        images=[
            ("rgb", synthetic_render(10, "demo:rgb")),
            ("ndvi", synthetic_render(11, "demo:ndvi")),
        ]
    )
    provider = MockProvider(seed=7)
    caption = generate_caption(
        provider, bundle, payload, site_id=SITE.site_id, word_cap=config.word_cap
    )
    print(f"\ncaption {caption.caption_id} ({len(caption.text.split())} words):")
    print(f"  {caption.text}")

    scorecard = evaluate(
        MockProvider(seed=1), caption.caption_id, caption.text, load_rubric(), GatePolicy()
    )
    print("\njudge scores (one call per dimension):")
    for dim, score in scorecard.scores.items():
        print(f"  {dim:20s} {score}")
    print(f"verdict: {scorecard.verdict}")


if __name__ == "__main__":
    main()
