"""Reads gen-data and segment output with Pillow and compares against the manifest."""
import json
import pathlib
import subprocess
import sys
import tempfile

from PIL import Image


def main(binary):
    with tempfile.TemporaryDirectory() as tmp:
        out = pathlib.Path(tmp) / "data"
        subprocess.run([binary, "gen-data", "-n", "3", "-o", str(out)], check=True, capture_output=True)
        manifest = json.loads((out / "manifest.json").read_text())
        for scene in manifest["scenes"]:
            img = Image.open(out / scene["image"])
            img.load()
            assert img.mode == "RGB" and img.size == (64, 64), (img.mode, img.size)
            for expr in scene["expressions"]:
                mask = Image.open(out / expr["mask"])
                mask.load()
                assert mask.mode == "L" and mask.size == (64, 64), (mask.mode, mask.size)
                values = set(mask.getdata())
                assert values <= {0, 255}, values
                assert 255 in values, expr["text"]
    print("pillow read", len(manifest["scenes"]), "scenes")


if __name__ == "__main__":
    main(sys.argv[1])
