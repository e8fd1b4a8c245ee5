import numpy as np
import pytest
import torch
from pydantic import ValidationError

from losses.objective import combine_losses, compute_components
from losses.weights import LossWeights
from regnet.checkpoint import load_checkpoint, load_seg_checkpoint, save_checkpoint, save_seg_checkpoint
from regnet.config import NetworkConfig, SegNetworkConfig, full_network_config
from regnet.model import RegModel, register_sample
from regnet.seg_model import SegModel, seg_forward
from utils.errors import CheckpointMismatchError, ShapeMismatchError
from volume_core.types import LandmarkSet, MaskVolume, RegistrationSample, Volume3D
from vq_core.codebook import InitKind
from vq_core.quantizer import IdentityQuantizer, VectorQuantizer


def random_pair(dims, seed=0, dtype=torch.float32):
    gen = torch.Generator().manual_seed(seed)
    return (torch.rand(1, 1, *dims, generator=gen, dtype=torch.float64).to(dtype),
            torch.rand(1, 1, *dims, generator=gen, dtype=torch.float64).to(dtype))


def cube_sample(dims=(8, 8, 8)) -> RegistrationSample:
    rng = np.random.default_rng(0)
    mask = np.zeros(dims)
    mask[2:6, 2:6, 2:6] = 1
    marks = LandmarkSet(np.full((1, 3), 3.0), ["a"])
    return RegistrationSample(Volume3D(rng.uniform(size=dims)), Volume3D(rng.uniform(size=dims)),
                              MaskVolume(mask), MaskVolume(mask), marks, marks)


class TestConfig:
    def test_defaults(self):
        config = NetworkConfig()
        assert config.channels == [8, 16, 32, 64]
        assert config.total_encoder_convs == 12
        assert config.bottleneck_dims() == (4, 4, 3)

    def test_full(self):
        config = full_network_config()
        assert config.total_encoder_convs == 12
        assert config.dict_sizes == (1024, 1024, 512)
        assert config.bottleneck_dims() == (16, 16, 13)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            NetworkConfig(dict_channels=(64, 32, 32))
        with pytest.raises(ValidationError):
            NetworkConfig(dict_channels=(64, 16, 64))
        with pytest.raises(ValidationError):
            NetworkConfig(n_res_blocks=1, channels=[8])
        with pytest.raises(ValidationError):
            NetworkConfig(enabled_quantizers=["x"])

    def test_quantizer_aliases(self):
        config = NetworkConfig(enabled_quantizers=["c", "v", "vanilla"])
        assert config.enabled_quantizers == ["vanilla", "collaborative"]
        assert config.with_quantizers([]).enabled_quantizers == []


class TestRegModel:
    def test_output_shape_and_identity_start(self):
        torch.manual_seed(0)
        model = RegModel(NetworkConfig())
        out = model(*random_pair((32, 32, 24)))
        assert tuple(out.ddf.shape) == (1, 3, 32, 32, 24)
        assert torch.count_nonzero(out.ddf) == 0
        assert set(out.quant_losses) == {"vanilla", "hierarchical", "collaborative"}
        assert tuple(out.indices["collaborative"].shape) == (1, 4, 4, 3)
        assert tuple(out.indices["hierarchical"].shape) == (1, 8, 8, 6)

    def test_disabled_quantizers(self, tiny_config):
        torch.manual_seed(0)
        full = RegModel(tiny_config)
        torch.manual_seed(0)
        bare = RegModel(tiny_config.with_quantizers([]))
        assert isinstance(bare.quantizer("vanilla"), IdentityQuantizer)
        assert bare.vector_quantizers() == {}
        assert isinstance(full.quantizer("collaborative"), VectorQuantizer)

        bare_state = bare.state_dict()
        for name, tensor in full.state_dict().items():
            if not name.startswith("quantizers."):
                assert torch.equal(tensor, bare_state[name])

        out = bare(*random_pair((8, 8, 8)))
        assert all(float(v) == 0.0 for v in out.quant_losses.values())
        assert all(v is None for v in out.indices.values())

    def test_deterministic(self, tiny_config):
        outputs = []
        for _ in range(2):
            torch.manual_seed(3)
            model = RegModel(tiny_config)
            with torch.no_grad():
                model.ddf_head.weight.normal_()
            outputs.append(model(*random_pair((8, 8, 8))).ddf)
        assert torch.equal(outputs[0], outputs[1])

    def test_gradients_reach_encoder_and_codebooks(self, tiny_config):
        torch.manual_seed(1)
        model = RegModel(tiny_config)
        moving, fixed = random_pair((8, 8, 8))
        out = model(moving, fixed)
        loss = ((out.ddf - 0.1) ** 2).mean() + out.quant_total
        loss.backward()
        assert torch.count_nonzero(model.ddf_head.weight.grad) > 0
        assert model.encoder[0].entry[0].weight.grad.abs().sum() > 0
        for quantizer in model.vector_quantizers().values():
            assert quantizer.codebook.grad.abs().sum() > 0

    def test_dims_mismatch(self, tiny_config):
        model = RegModel(tiny_config)
        with pytest.raises(ShapeMismatchError):
            model(*random_pair((8, 8, 16)))

    def test_loss_gradient_matches_finite_differences(self, tiny_config, float64):
        torch.manual_seed(4)
        model = RegModel(tiny_config.with_quantizers([]))
        with torch.no_grad():
            model.ddf_head.weight.normal_(std=0.1)
        moving, fixed = random_pair((8, 8, 8), seed=2, dtype=torch.float64)
        mask = (moving > 0.5).double()
        weights = LossWeights.full()

        def loss_value():
            out = model(moving, fixed)
            return combine_losses(compute_components(moving, fixed, mask, mask, out.ddf, out.quant_losses), weights)

        model.zero_grad()
        loss_value().backward()
        params = [model.ddf_head.weight, model.decoder[0].merge[0].weight, model.encoder[0].entry[0].weight,
                  model.head_v.weight]
        rng = np.random.default_rng(0)
        eps = 1e-6
        for param in params:
            flat = param.data.view(-1)
            for i in rng.choice(flat.numel(), size=3, replace=False):
                original = flat[i].item()
                with torch.no_grad():
                    flat[i] = original + eps
                    plus = loss_value().item()
                    flat[i] = original - eps
                    minus = loss_value().item()
                    flat[i] = original
                numeric = (plus - minus) / (2 * eps)
                analytic = param.grad.view(-1)[i].item()
                assert abs(numeric - analytic) <= 1e-4 * max(abs(numeric), abs(analytic)) + 1e-9

    def test_quantized_gradients_match_finite_differences(self, tiny_config, float64):
        torch.manual_seed(4)
        model = RegModel(tiny_config)
        with torch.no_grad():
            model.ddf_head.weight.normal_(std=0.1)
        moving, fixed = random_pair((8, 8, 8), seed=2, dtype=torch.float64)
        mask = (moving > 0.5).double()
        weights = LossWeights.full()
        vanilla = model.quantizer("vanilla")

        def forward():
            out = model(moving, fixed)
            return out, compute_components(moving, fixed, mask, mask, out.ddf, out.quant_losses)

        def registration_value():
            _, c = forward()
            return c.L_SSD + c.L_Dice + c.L_Bend

        def total_value():
            _, c = forward()
            return combine_losses(c, weights)

        def central_difference(fn, param, i, eps=1e-6):
            flat = param.data.view(-1)
            original = flat[i].item()
            with torch.no_grad():
                flat[i] = original + eps
                plus = fn().item()
                flat[i] = original - eps
                minus = fn().item()
                flat[i] = original
            return (plus - minus) / (2 * eps)

        def close(numeric, analytic):
            return abs(numeric - analytic) <= 1e-4 * max(abs(numeric), abs(analytic)) + 1e-7

        # 量化器之后的参数：码字选择局部不变，解析梯度即真实梯度
        model.zero_grad()
        total_value().backward()
        rng = np.random.default_rng(0)
        for param in (model.ddf_head.weight, model.decoder[0].merge[0].weight, model.hier_proj.weight):
            for i in rng.choice(param.numel(), size=3, replace=False):
                assert close(central_difference(total_value, param, i), param.grad.view(-1)[i].item())

        # 配准项不经过码本；编码器得到的是直通梯度
        captured = {}
        handle = vanilla.register_forward_hook(lambda m, inp, out: captured.update(features=inp[0], z=out[0]))
        model.zero_grad()
        out, c = forward()
        handle.remove()
        registration = c.L_SSD + c.L_Dice + c.L_Bend
        grad_z, grad_features = torch.autograd.grad(registration, [captured["z"], captured["features"]],
                                                    retain_graph=True)
        assert torch.equal(grad_z, grad_features)
        registration.backward()
        assert vanilla.codebook.grad is None
        assert model.head_v.weight.grad.abs().sum() > 0
        # 前向值只依赖所选码字，head_v 的数值梯度为零
        assert abs(central_difference(registration_value, model.head_v.weight, 0)) < 1e-9

        # 码本只接收量化损失第一项：数值梯度为 (1 + β) 倍
        used = int(torch.unique(out.indices["vanilla"])[0])
        model.zero_grad()
        forward()[0].quant_total.backward()
        for channel in range(vanilla.dim):
            i = used * vanilla.dim + channel
            numeric = central_difference(lambda: forward()[0].quant_total, vanilla.codebook, i)
            assert close(numeric / (1.0 + vanilla.beta), vanilla.codebook.grad.view(-1)[i].item())

    def test_register_sample(self, tiny_config):
        model = RegModel(tiny_config)
        ddf, losses = register_sample(model, cube_sample())
        assert ddf.dims == (8, 8, 8)
        assert np.all(ddf.data == 0)
        assert set(losses) == {"vanilla", "hierarchical", "collaborative"}
        with pytest.raises(ShapeMismatchError):
            register_sample(model, cube_sample((8, 8, 9)))

    @pytest.mark.slow
    def test_full_dims(self):
        model = RegModel(full_network_config())
        with torch.no_grad():
            out = model(*random_pair((128, 128, 102)))
        assert tuple(out.ddf.shape) == (1, 3, 128, 128, 102)
        assert tuple(out.indices["collaborative"].shape) == (1, 16, 16, 13)


class TestSegModel:
    def test_identity_start_and_feature_shape(self):
        config = SegNetworkConfig()
        model = SegModel(config)
        image = Volume3D(np.random.default_rng(0).uniform(size=(32, 32, 24)))
        mask, features = seg_forward(model, image)
        assert np.allclose(mask.data, 0.5)
        assert tuple(features.data.shape) == (4, 4, 3, NetworkConfig().dict_channels[2])
        assert config.feature_channels == 64

    def test_feature_layer(self):
        config = SegNetworkConfig(channels=[4, 8], bottleneck_channels=6, input_dims=(8, 8, 8), feature_layer=-2)
        assert config.feature_channels == 8
        model = SegModel(config)
        _, features = seg_forward(model, Volume3D(np.zeros((8, 8, 8))))
        assert tuple(features.data.shape) == (4, 4, 4, 8)

    def test_dims_mismatch(self):
        model = SegModel(SegNetworkConfig(channels=[4], bottleneck_channels=4, input_dims=(8, 8, 8)))
        with pytest.raises(ShapeMismatchError):
            seg_forward(model, Volume3D(np.zeros((8, 8, 4))))


class TestCheckpoint:
    def test_round_trip(self, tmp_path, tiny_config):
        torch.manual_seed(0)
        model = RegModel(tiny_config)
        model.quantizer("collaborative").init_kind = InitKind.KMeans
        save_checkpoint(tmp_path / "m.pt", model)
        loaded = load_checkpoint(tmp_path / "m.pt", expected=tiny_config)
        assert loaded.quantizer("collaborative").init_kind is InitKind.KMeans
        for name, tensor in model.state_dict().items():
            assert torch.equal(tensor, loaded.state_dict()[name])

    def test_mismatch(self, tmp_path, tiny_config):
        save_checkpoint(tmp_path / "m.pt", RegModel(tiny_config))
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(tmp_path / "m.pt", expected=tiny_config.with_quantizers(["v"]))
        torch.save({"format": "something-else"}, tmp_path / "other.pt")
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(tmp_path / "other.pt")
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "missing.pt")

    def test_seg_round_trip(self, tmp_path):
        config = SegNetworkConfig(channels=[4], bottleneck_channels=4, input_dims=(8, 8, 8), zero_init_head=False)
        model = SegModel(config)
        save_seg_checkpoint(tmp_path / "seg.pt", model)
        loaded = load_seg_checkpoint(tmp_path / "seg.pt")
        assert loaded.config == config
        with pytest.raises(CheckpointMismatchError):
            load_checkpoint(tmp_path / "seg.pt")
