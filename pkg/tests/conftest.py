from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image, ImageDraw

LOOP_EXAMPLE = """flowchart LR
  A([Start]) --> B[/Accept 'data' as input/]
  B --> C{Start a loop...}
  C --> D{Does 'self' have...}
  D -- Yes --> E[/Use 'setattr'.../]
  D -- No --> F[/Skip setting.../]
  E --> G{End of loop?}
  F --> G
  G -- Yes --> H([End])
  G -- No --> C  %% recovered by edge map
"""

LOOP_WITHOUT_BACK_EDGE = LOOP_EXAMPLE.replace("  G -- No --> C  %% recovered by edge map\n", "")

# small corpus used by the end-to-end tests
CORPUS = {
    "setattr_loop": LOOP_EXAMPLE,
    "chain": "flowchart TD\nS([Start]) --> P[Read input]\nP --> Q[Process]\nQ --> T([Stop])\n",
    "branch": (
        "flowchart TD\nA([Begin]) --> B{Valid?}\nB -->|yes| C[Store]\nB -->|no| D[Reject]\n"
        "C --> E([Done])\nD --> E\n"
    ),
    "retry": (
        "graph TD\nI([Init]) --> R[Send request]\nR --> K{Ack received?}\n"
        "K -- No --> W[Wait]\nW --> R\nK -- Yes --> Z([Finish])\n"
    ),
    "dual": (
        "flowchart LR\nA1([Power on]) --> B1[Self test]\nB1 --> C1{PortA up?}\n"
        "C1 -- Yes --> D1[Enable PortA]\nC1 -- No --> E1[Raise alarm]\nD1 --> F1([Ready])\n"
        "E1 --> F1\n"
    ),
}


def draw_flowchart(n_boxes: int, size=(320, 480), seed: int = 0) -> np.ndarray:
    """Boxes stacked vertically and joined by arrows; RGBA with a transparent margin."""
    w, h = size
    im = Image.new("RGBA", (w, h), (0, 0, 0, 0))
    d = ImageDraw.Draw(im)
    d.rectangle([8, 8, w - 8, h - 8], fill=(255, 255, 255, 255))
    step = (h - 40) // max(n_boxes, 1)
    rng = np.random.default_rng(seed)
    for i in range(n_boxes):
        top = 20 + i * step
        left = 60 + int(rng.integers(0, 30))
        d.rectangle([left, top, left + 160, top + step // 2], outline=(0, 0, 0, 255), width=2)
        if i + 1 < n_boxes:
            x = left + 80
            d.line([x, top + step // 2, x, top + step], fill=(0, 0, 0, 255), width=2)
            d.polygon([(x - 5, top + step - 8), (x + 5, top + step - 8), (x, top + step)],
                      fill=(0, 0, 0, 255))
    return np.asarray(im)


def fence(code: str) -> str:
    return f"Here is the diagram.\n\n```mermaid\n{code.strip()}\n```\n"


@pytest.fixture
def loop_code() -> str:
    return LOOP_EXAMPLE


@pytest.fixture
def dataset(tmp_path: Path):
    """A 5-flowchart manifest plus mock fixtures that echo the ground truth."""
    root = tmp_path / "data"
    (root / "images").mkdir(parents=True)
    (root / "truth").mkdir()
    rows = []
    for i, (fid, code) in enumerate(CORPUS.items()):
        Image.fromarray(draw_flowchart(3 + i, seed=i)).save(root / "images" / f"{fid}.png")
        (root / "truth" / f"{fid}.mmd").write_text(code, encoding="utf-8")
        rows.append({"id": fid, "image_path": f"images/{fid}.png", "truth_path": f"truth/{fid}.mmd"})
    manifest = root / "manifest.json"
    manifest.write_text(json.dumps({"entries": rows}, indent=2), encoding="utf-8")
    return root, manifest


def write_fixtures(mock_dir: Path, ids, condition: str, codes, runs: int = 1) -> None:
    for fid in ids:
        d = mock_dir / fid / condition
        d.mkdir(parents=True, exist_ok=True)
        for k in range(1, runs + 1):
            (d / f"run{k}.txt").write_text(fence(codes[fid]), encoding="utf-8")
