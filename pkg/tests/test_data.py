import numpy as np
import pytest

from znext import netpbm
from znext.data import ManifestError, Sample, load_dataset, read_manifest, write_manifest


def make_files(root, names):
    pairs = []
    for i, n in enumerate(names):
        img, msk = root / f"{n}.ppm", root / f"{n}.pgm"
        netpbm.write(img, np.full((4, 4, 3), i, np.uint8))
        m = np.zeros((4, 4), np.uint8)
        m[i % 4, :] = 255
        netpbm.write(msk, m)
        pairs.append((str(img), str(msk)))
    return pairs


def test_empty_manifest_is_empty_dataset(tmp_path):
    (tmp_path / "m.txt").write_text("")
    assert load_dataset(tmp_path / "m.txt") == ([], False)


def test_round_trip_preserves_order(tmp_path):
    pairs = make_files(tmp_path, ["c", "a", "b"])
    write_manifest(tmp_path / "m.txt", [[p] for p in pairs])
    entries, video = read_manifest(tmp_path / "m.txt")
    assert not video and [e[0] for e in entries] == pairs
    samples, _ = load_dataset(tmp_path / "m.txt")
    assert [s.names for s in samples] == [("c",), ("a",), ("b",)]
    assert samples[1].frames[0, 0, 0, 0] == pytest.approx(1 / 255)


def test_relative_paths_resolve_against_manifest_dir(tmp_path):
    sub = tmp_path / "data"
    sub.mkdir()
    make_files(sub, ["x"])
    (sub / "m.txt").write_text("x.ppm\tx.pgm\n")
    entries, _ = read_manifest(sub / "m.txt")
    assert entries == [[(str(sub / "x.ppm"), str(sub / "x.pgm"))]]
    write_manifest(sub / "m2.txt", entries)
    assert (sub / "m2.txt").read_text() == "x.ppm\tx.pgm\n"


def test_clip_block_of_three_lines_is_one_clip(tmp_path):
    make_files(tmp_path, ["f0", "f1", "f2", "g0", "g1", "g2"])
    text = "#video\nf0.ppm\tf0.pgm\nf1.ppm\tf1.pgm\nf2.ppm\tf2.pgm\n\ng0.ppm\tg0.pgm\ng1.ppm\tg1.pgm\ng2.ppm\tg2.pgm\n"
    (tmp_path / "v.txt").write_text(text)
    samples, video = load_dataset(tmp_path / "v.txt")
    assert video and len(samples) == 2
    assert samples[0].clip_len == 3 and samples[0].frames.shape == (3, 3, 4, 4)
    assert samples[0].names == ("f0", "f1", "f2")
    entries, _ = read_manifest(tmp_path / "v.txt")
    write_manifest(tmp_path / "v2.txt", entries, video=True)
    assert (tmp_path / "v2.txt").read_text() == text


def test_missing_files_listed(tmp_path):
    make_files(tmp_path, ["a"])
    (tmp_path / "m.txt").write_text("a.ppm\ta.pgm\nb.ppm\tb.pgm\n")
    with pytest.raises(FileNotFoundError) as err:
        load_dataset(tmp_path / "m.txt")
    assert str(tmp_path / "b.ppm") in str(err.value) and str(tmp_path / "b.pgm") in str(err.value)


def test_malformed_line_rejected(tmp_path):
    (tmp_path / "m.txt").write_text("only-one-column\n")
    with pytest.raises(ManifestError):
        read_manifest(tmp_path / "m.txt")


def test_sample_shape_validation():
    with pytest.raises(ValueError):
        Sample(np.zeros((1, 3, 4, 4)), np.zeros((1, 1, 4, 5)), ("a",))
    with pytest.raises(ValueError):
        Sample(np.zeros((2, 3, 4, 4)), np.zeros((2, 1, 4, 4)), ("a",))
