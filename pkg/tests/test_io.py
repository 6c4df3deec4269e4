import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp
from PIL import Image

from cssr import checkpoint as ckpt
from cssr.config import format_config, load_config, parse_config
from cssr.degradation import DegradationParams
from cssr.durcan import DuRCAN, DuRCANConfig
from cssr.errors import ConfigurationError, ImageIOError
from cssr.imageio import read_image, to_float, to_uint8, write_image
from cssr.trainer import TrainConfig

images = hnp.arrays(np.uint8, st.tuples(st.integers(1, 9), st.integers(1, 9), st.just(3)))


class TestImages:
    @settings(max_examples=30, deadline=None)
    @given(img=images)
    def test_ppm_round_trip(self, img, tmp_path_factory):
        path = tmp_path_factory.mktemp("ppm") / "x.ppm"
        write_image(path, img)
        assert np.array_equal(read_image(path), img)

    def test_png_round_trip(self, tmp_path):
        img = np.random.default_rng(0).integers(0, 256, size=(7, 5, 3), dtype=np.uint8)
        write_image(tmp_path / "x.png", img)
        assert np.array_equal(read_image(tmp_path / "x.png"), img)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.ppm"
        path.write_bytes(b"P6\n4 4\n255\n" + bytes(10))
        with pytest.raises(ImageIOError, match="t.ppm"):
            read_image(path)

    def test_sixteen_bit_ppm(self, tmp_path):
        path = tmp_path / "d.ppm"
        path.write_bytes(b"P6\n1 1\n65535\n" + bytes(6))
        with pytest.raises(ImageIOError, match="16-bit"):
            read_image(path)

    def test_sixteen_bit_png(self, tmp_path):
        Image.fromarray(np.zeros((4, 4), dtype=np.uint16)).save(tmp_path / "d.png")
        with pytest.raises(ImageIOError, match="16-bit"):
            read_image(tmp_path / "d.png")

    def test_missing_and_garbage(self, tmp_path):
        with pytest.raises(ImageIOError):
            read_image(tmp_path / "none.ppm")
        (tmp_path / "g.png").write_bytes(b"not an image")
        with pytest.raises(ImageIOError):
            read_image(tmp_path / "g.png")

    def test_float_conversion_round_trip(self):
        img = np.random.default_rng(1).integers(0, 256, size=(4, 6, 3), dtype=np.uint8)
        x = to_float(img, np.float64)
        assert x.shape == (3, 4, 6) and x.max() <= 1
        assert np.array_equal(to_uint8(x), img)


class TestCheckpoint:
    def net(self, seed=0):
        return DuRCAN(DuRCANConfig.preset("durcan-6_s", channels=8), seed=seed)

    def test_bitwise_round_trip(self, tmp_path):
        net = self.net()
        state = ckpt.module_state(net)
        ckpt.save_checkpoint(tmp_path / "a.cssr", state, {"arch": "durcan-6_s"})
        meta, loaded = ckpt.load_checkpoint(tmp_path / "a.cssr")
        assert meta == {"arch": "durcan-6_s"}
        assert list(loaded) == list(state)
        for k in state:
            assert loaded[k].tobytes() == state[k].tobytes()

    def test_layout(self, tmp_path):
        ckpt.save_checkpoint(tmp_path / "b.cssr", {"w": np.arange(6, dtype=np.float32).reshape(2, 3)})
        raw = (tmp_path / "b.cssr").read_bytes()
        header, payload = raw.split(b"\n\n", 1)
        assert header == b"CSSR1\nw\t6\t2,3"
        assert payload == np.arange(6, dtype="<f4").tobytes()

    def test_load_into_and_mismatch(self, tmp_path):
        src, dst = self.net(1), self.net(2)
        ckpt.save_checkpoint(tmp_path / "c.cssr", ckpt.module_state(src))
        ckpt.load_into(dst, tmp_path / "c.cssr")
        for (_, p), (_, q) in zip(src.named_parameters(), dst.named_parameters()):
            assert np.array_equal(p.data, q.data)
        other = DuRCAN(DuRCANConfig.preset("durcan-6", channels=8))
        before = [p.data.copy() for _, p in other.named_parameters()]
        with pytest.raises(ConfigurationError, match="does not match"):
            ckpt.load_into(other, tmp_path / "c.cssr")
        assert all(np.array_equal(b, p.data) for b, (_, p) in zip(before, other.named_parameters()))

    def test_corrupt(self, tmp_path):
        ckpt.save_checkpoint(tmp_path / "d.cssr", {"w": np.ones(4, np.float32)})
        raw = (tmp_path / "d.cssr").read_bytes()
        (tmp_path / "d.cssr").write_bytes(raw[:-2])
        with pytest.raises(ImageIOError, match="payload"):
            ckpt.load_checkpoint(tmp_path / "d.cssr")
        (tmp_path / "e.cssr").write_bytes(b"junk")
        with pytest.raises(ImageIOError):
            ckpt.read_manifest(tmp_path / "e.cssr")


class TestConfig:
    def test_round_trip(self):
        cfg = TrainConfig(arch="durcan-6", gen_channels=(16, 32, 32), joint=False, freeze="durbs")
        deg = DegradationParams(color_gain=(1.0, 1.1, 0.9), seed=3)
        assert parse_config(format_config(cfg, deg)) == (cfg, deg)

    def test_comments_and_defaults(self, tmp_path):
        (tmp_path / "c.cfg").write_text("# comment\nlr = 2e-4   # inline\n\ndegradation.gamma = 1.0\n")
        cfg, deg = load_config(tmp_path / "c.cfg")
        assert cfg.lr == 2e-4 and cfg.batch == 16 and deg.gamma == 1.0

    @pytest.mark.parametrize("text", ["bogus = 1", "lr = fast", "lr", "lr = 1\nlr = 2",
                                      "joint = maybe", "degradation.color_gain = 1,2",
                                      "degradation.nothing = 1", "mix_gamma = 2"])
    def test_rejections(self, text):
        with pytest.raises(ConfigurationError):
            parse_config(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageIOError):
            load_config(tmp_path / "missing.cfg")
