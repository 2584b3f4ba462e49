"""
Tests for the GRU cell and the StringLiteral, ScalarTuple, Tuple and StdDev modules
"""

import math

import pytest
import torch

from core.random import make_generator
from models.gru import GruCell, gru_step
from models.scalar_tuple import ScalarTupleModule, scalar_decode_loss, scalar_whiten
from models.simple_tuple import SimpleTupleModule
from models.stddev import StdDevNetwork
from models.string_literal import StringLiteralModule, choose_inputs, string_decode_loss, string_encode
from models.tuple_module import TupleModule, tuple_decode_loss, tuple_encode
from models.vocabulary import EOS_INDEX, Vocabulary
from tests.conftest import check_parameter_gradients
from utils.errors import DataError, ShapeError, VocabularyError


def gen(name="t"):
    return make_generator(0, name)


class TestGruCell:
    def test_zero_weights_and_state(self):
        cell = GruCell(3, 2, gen())
        with torch.no_grad():
            for p in cell.parameters():
                p.zero_()
        h = gru_step(cell, torch.randn(4, 3, generator=gen("x")), torch.zeros(4, 2))
        # z = 0.5 and c = 0 give h = 0
        assert torch.equal(h, torch.zeros(4, 2))

    def test_initial_update_gate(self):
        cell = GruCell(3, 2, gen())
        z, _ = cell.gates(torch.randn(5, 3, generator=gen("x")), torch.randn(5, 2, generator=gen("h")))
        assert torch.allclose(z, torch.full((5, 2), 1 / (1 + math.exp(-1))))

    def test_matches_hand_computation(self):
        cell = GruCell(2, 2, gen())
        x = torch.tensor([[0.3, -0.7]])
        h = torch.tensor([[0.1, 0.4]])
        with torch.no_grad():
            cell.W_z.copy_(torch.tensor([[0.2, -0.1], [0.0, 0.3]]))
            cell.b_z.copy_(torch.tensor([0.1, -0.2]))
        z = torch.sigmoid(x @ cell.W_z + h @ cell.U_z + cell.b_z)
        r = torch.sigmoid(x @ cell.W_r + h @ cell.U_r + cell.b_r)
        pre = x @ cell.W_h + (r * h) @ cell.U_h + cell.b_h
        c = torch.minimum(torch.nn.functional.celu(pre, 3.0), torch.tensor(6.0))
        assert torch.allclose(cell(x, h), z * h + (1 - z) * c)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            GruCell(3, 2)(torch.zeros(1, 4), torch.zeros(1, 2))

    def test_gradients(self):
        cell = GruCell(2, 3, gen())
        x = torch.randn(2, 2, generator=gen("x"))
        h = torch.randn(2, 3, generator=gen("h")) * 0.5
        assert check_parameter_gradients(cell, lambda m: m(x, h).pow(2).sum())


class TestVocabulary:
    def test_eos_first(self):
        vocab = Vocabulary.build(["BA", "C"])
        assert vocab.to_list() == ["<EOS>", "A", "B", "C"]
        assert vocab.encode("AB") == [1, 2, EOS_INDEX]
        assert vocab.decode([3, 1, 0, 2]) == "CA"

    def test_unknown_character(self):
        with pytest.raises(VocabularyError):
            Vocabulary.build(["AB"]).encode("Z")

    def test_batch_padding(self):
        tokens, mask = Vocabulary.build(["AB"]).batch(["AB", ""])
        assert tokens.tolist() == [[1, 2, 0], [0, 0, 0]]
        assert mask.tolist() == [[True, True, True], [True, False, False]]


class TestStringLiteral:
    @pytest.fixture
    def module(self):
        vocab = Vocabulary.build(["MAIN ST", "ELM AVE"])
        return StringLiteralModule(vocab, latent_dim=3, state_dim=3, embed_dim=2, generator=gen())

    def test_encode_shape_and_determinism(self, module):
        a = module.encode(["MAIN ST", "ELM AVE", ""])
        assert a.shape == (3, 3)
        assert torch.equal(a, module.encode(["MAIN ST", "ELM AVE", ""]))
        assert torch.equal(string_encode(module, "MAIN ST"), a[0])

    def test_empty_string_uses_only_eos(self, module):
        loss, nats = string_decode_loss(module, torch.zeros(3), "")
        assert nats.shape == (1,)
        assert loss.item() == pytest.approx(nats[0].item())

    def test_uniform_softmax_costs_log_vocab(self, module):
        with torch.no_grad():
            module.projection.weight.zero_()
            module.projection.bias.zero_()
        result = module.decode_loss(torch.randn(2, 3, generator=gen("z")), ["MAIN", "ELM AVE"])
        assert torch.allclose(result.loss, torch.full((2,), math.log(module.vocab.size)))

    def test_single_symbol_vocabulary_is_free(self):
        module = StringLiteralModule(Vocabulary.build([""]), 2, generator=gen())
        assert module.decode_loss(torch.zeros(1, 2), [""]).loss.item() == pytest.approx(0.0)
        assert module.generate(torch.zeros(3, 2), gen("g")) == ["", "", ""]

    def test_generate_stops_at_eos(self, module):
        with torch.no_grad():
            module.projection.weight.zero_()
            module.projection.bias.fill_(-50.0)
            module.projection.bias[EOS_INDEX] = 50.0
        assert module.generate(torch.randn(4, 3, generator=gen("z")), gen("g")) == [""] * 4

    def test_generate_respects_max_len(self, module):
        with torch.no_grad():
            module.projection.weight.zero_()
            module.projection.bias.fill_(-50.0)
            module.projection.bias[module.vocab.encode("A")[0]] = 50.0
        assert module.generate(torch.zeros(1, 3), max_len=5, argmax=True) == ["AAAAA"]

    def test_out_of_vocabulary(self, module):
        with pytest.raises(VocabularyError):
            module.encode(["ZZZ"])

    def test_teacher_forcing_ignores_generator(self, module):
        z = torch.randn(2, 3, generator=gen("z"))
        a = module.decode_loss(z, ["MAIN", "ELM"], 1.0, gen("a")).loss
        b = module.decode_loss(z, ["MAIN", "ELM"], 1.0, gen("b")).loss
        assert torch.equal(a, b)

    def test_sampling_is_seeded(self, module):
        z = torch.randn(2, 3, generator=gen("z"))
        a = module.decode_loss(z, ["MAIN", "ELM"], 0.5, gen("s")).loss
        b = module.decode_loss(z, ["MAIN", "ELM"], 0.5, gen("s")).loss
        assert torch.equal(a, b)

    def test_gradients_through_encoder_and_decoder(self, module):
        def loss(m):
            z = m.encode(["MAIN", "ELM AVE"])
            return m.decode_loss(z, ["MAIN", "ELM AVE"]).loss.sum()
        assert check_parameter_gradients(module, loss)


def test_choose_inputs_extremes():
    truth = torch.tensor([1, 2, 3])
    sampled = torch.tensor([7, 8, 9])
    assert torch.equal(choose_inputs(truth, lambda: sampled, 1.0, None), truth)
    assert torch.equal(choose_inputs(truth, lambda: sampled, 0.0, None), sampled)


class TestScalarTuple:
    def test_identity_stats_scale_by_epsilon(self):
        module = ScalarTupleModule(2, 3, generator=gen())
        module.seed_stats(torch.zeros(2), torch.eye(2))
        x = torch.tensor([[3.0, -4.0]])
        whitened = scalar_whiten(module, x)
        assert whitened.norm().item() == pytest.approx(5.0 / math.sqrt(1 + 1e-5))

    def test_whitening_quadratic_form(self):
        module = ScalarTupleModule(2, 3, generator=gen())
        module.seed_stats(torch.zeros(2), torch.tensor([[2.0, 1.0], [1.0, 2.0]]))
        whitened = module.whiten(torch.tensor([[1.0, 1.0]]))
        assert whitened.pow(2).sum().item() == pytest.approx(2.0 / (3.0 + 1e-5))
        assert torch.allclose(module.unwhiten(whitened), torch.tensor([[1.0, 1.0]]))

    def test_first_update_adopts_batch(self):
        module = ScalarTupleModule(2, 3)
        batch = torch.tensor([[0.0, 1.0], [2.0, 3.0]])
        module.update_stats(batch)
        assert torch.allclose(module.mean, torch.tensor([1.0, 2.0]))
        assert torch.allclose(module.cov, torch.cov(batch.T))

    def test_moving_average_update(self):
        module = ScalarTupleModule(2, 3)
        module.seed_stats(torch.zeros(2), torch.eye(2))
        module.update_stats(torch.tensor([[1.0, 2.0], [1.0, 2.0]]))
        assert torch.allclose(module.mean, torch.tensor([0.001, 0.002]))
        assert torch.allclose(module.cov, 0.999 * torch.eye(2))

    def test_stats_converge(self):
        g = gen("data")
        mean = torch.tensor([44.0, -72.5])
        chol = torch.tensor([[0.5, 0.0], [0.2, 0.3]])
        module = ScalarTupleModule(2, 3)
        for _ in range(3000):
            module.update_stats(mean + torch.randn(256, 2, generator=g) @ chol.T)
        assert torch.allclose(module.mean, mean, atol=0.01)
        assert torch.allclose(module.cov, chol @ chol.T, atol=0.01)

    def test_uninitialized_whitening_fails(self):
        with pytest.raises(DataError):
            ScalarTupleModule(2, 3).whiten(torch.zeros(1, 2))

    def test_update_needs_two_rows(self):
        with pytest.raises(DataError):
            ScalarTupleModule(2, 3).update_stats(torch.zeros(1, 2))

    def test_decode_loss_is_squared_error(self):
        module = ScalarTupleModule(2, 3, generator=gen())
        module.seed_stats(torch.zeros(2), torch.eye(2))
        z = torch.randn(3, generator=gen("z"))
        x = torch.tensor([0.5, -0.5])
        expected = (module.decode(z.unsqueeze(0))[0] - module.whiten(x.unsqueeze(0))[0]).pow(2).sum()
        assert scalar_decode_loss(module, z, x).item() == pytest.approx(expected.item())

    def test_generate_inverts_whitening(self):
        module = ScalarTupleModule(2, 3, generator=gen())
        module.seed_stats(torch.tensor([44.0, -72.0]), torch.tensor([[0.3, 0.1], [0.1, 0.2]]))
        z = torch.randn(4, 3, generator=gen("z"))
        assert torch.allclose(module.whiten(module.generate(z)), module.decode(z))

    def test_gradients(self):
        module = ScalarTupleModule(2, 3, generator=gen())
        module.seed_stats(torch.tensor([1.0, 2.0]), torch.tensor([[1.0, 0.3], [0.3, 0.5]]))
        x = torch.tensor([[1.5, 2.5], [0.0, 1.0]])
        assert check_parameter_gradients(module, lambda m: m.decode_loss(m.encode(x), x).sum())


class TestTuple:
    @pytest.fixture
    def module(self):
        return TupleModule(arity=3, latent_dim=2, state_dim=2, generator=gen())

    def test_encode_shape(self, module):
        children = torch.randn(4, 3, 2, generator=gen("c"))
        assert module.encode(children).shape == (4, 2)
        assert torch.allclose(tuple_encode(module, list(children[0])), module.encode(children)[0])

    def test_encode_depends_on_child_order(self, module):
        children = torch.randn(4, 3, 2, generator=gen("c"))
        swapped = children[:, [1, 0, 2]]
        assert not torch.allclose(module.encode(children), module.encode(swapped))
        assert torch.equal(module.encode(children[:, [0, 1, 2]]), module.encode(children))

    def test_wrong_arity(self, module):
        with pytest.raises(ShapeError):
            module.encode(torch.zeros(1, 2, 2))

    def test_skew_zero_when_truth_matches_output(self, module):
        z = torch.randn(2, 2, generator=gen("z"))
        free = module.decode(z).children
        forced = module.decode(z, free.detach(), p_gt=1.0)
        assert torch.allclose(forced.skew, torch.zeros(2, 3))

    def test_skew_of_last_element_offset(self, module):
        z = torch.randn(1, 2, generator=gen("z"))
        truth = module.decode(z).children.detach().clone()
        truth[:, -1] += 0.3
        result = module.decode(z, truth, p_gt=1.0)
        assert result.skew[0, :2].abs().max().item() == pytest.approx(0.0, abs=1e-12)
        assert result.skew[0, 2].item() == pytest.approx(0.09)

    def test_single_record_form(self, module):
        z = torch.randn(2, generator=gen("z"))
        children = [torch.randn(2, generator=gen(f"c{k}")) for k in range(3)]
        out, skew = tuple_decode_loss(module, z, children)
        assert out.shape == (3, 2)
        assert skew.shape == (3,)

    def test_gradients(self, module):
        children = torch.randn(2, 3, 2, generator=gen("c"))

        def loss(m):
            return m.decode(m.encode(children), children).skew.sum()
        assert check_parameter_gradients(module, loss)


def test_simple_tuple_passes_embedding_to_every_child():
    module = SimpleTupleModule(3, 2, gen())
    children = torch.randn(4, 3, 2, generator=gen("c"))
    z = module.encode(children)
    assert z.shape == (4, 2)
    assert torch.equal(module.decode(z)[:, 1], z)


class TestStdDev:
    def test_initial_output(self):
        network = StdDevNetwork(4, gen())
        sigma = network(torch.randn(3, 4, generator=gen("mu")))
        assert torch.allclose(sigma, torch.full((3, 4), 1 / (1 + math.exp(5))))
        assert sigma[0, 0].item() == pytest.approx(0.0066929, abs=1e-7)

    def test_gradients(self):
        network = StdDevNetwork(3, gen())
        with torch.no_grad():
            network.output.weight.normal_(0.0, 0.3, generator=gen("w"))
        mu = torch.randn(2, 3, generator=gen("mu"))
        assert check_parameter_gradients(network, lambda m: m(mu).sum())
