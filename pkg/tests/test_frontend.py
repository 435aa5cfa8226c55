import numpy as np
import pytest
import torch

from diffeditor.data_model import WordTokenization
from diffeditor.errors import DataError, ProviderError
from diffeditor.frontend.embeddings import (
    BertEmbeddingProvider,
    EmbeddingCache,
    HashEmbeddingProvider,
    WordProjection,
    embed_words,
    upsample_word_embeddings,
)
from diffeditor.frontend.g2p import g2p, letter_to_sound, normalize


@pytest.mark.parametrize(
    "text,phones",
    [("cat", ("K", "AE1", "T")), ("a", ("AH0",)), ("Cat!", ("K", "AE1", "T"))],
)
def test_g2p_lexicon(text, phones):
    seq, tok = g2p(text)
    assert seq.phonemes == phones
    assert tok.spans == ((0, len(phones)),)


@pytest.mark.parametrize("text", ["", "   ", "?!"])
def test_g2p_empty(text):
    with pytest.raises(DataError, match="empty text"):
        g2p(text)


def test_g2p_punctuation_pause_and_spans():
    seq, tok = g2p("Hello, world.")
    assert tok.words == ("hello", "world")
    assert seq.phonemes[4] == "SP"
    assert tok.spans == ((0, 4), (5, 9))


def test_digits_spelled():
    assert normalize("2 cats") == ["two", "cats"]


def test_oov_fallback():
    phones = letter_to_sound("blorf")
    assert phones == ("B", "L", "AO1", "R", "F")
    seq, _ = g2p("blorf")
    assert seq.phonemes == phones


def test_hash_embeddings_deterministic_shape():
    p = HashEmbeddingProvider(32)
    a = embed_words(p, ["the", "cat", "the"]).matrix
    b = embed_words(p, ["the", "cat", "the"]).matrix
    assert a.shape == (3, 32) and np.array_equal(a, b)
    # position-dependent: repeated words get distinct vectors
    assert not np.allclose(a[0], a[2])


def test_embed_empty_rejected():
    with pytest.raises(DataError):
        embed_words(HashEmbeddingProvider(8), [])


def test_upsample_hand_example():
    mat = np.array([[1.0, 1.0], [2.0, 2.0]])
    tok = WordTokenization(("a", "bc"), ((1, 2), (3, 5)))
    out = upsample_word_embeddings(mat, tok, 6)
    assert out[:, 0].tolist() == [0, 1, 0, 2, 2, 0]


def test_upsample_count_mismatch():
    tok = WordTokenization(("a",), ((0, 1),))
    with pytest.raises(DataError):
        upsample_word_embeddings(np.ones((2, 4)), tok, 3)


def test_projection_shape_bias_free():
    proj = WordProjection(768, 192)
    assert proj.proj.bias is None
    out = proj(torch.randn(2, 5, 768))
    assert out.shape == (2, 5, 192)
    assert torch.equal(proj(torch.zeros(3, 768)), torch.zeros(3, 192))
    with pytest.raises(DataError):
        proj(torch.randn(3, 100))


def test_projection_identity_weights():
    proj = WordProjection(4, 4)
    with torch.no_grad():
        proj.proj.weight.copy_(torch.eye(4))
    x = torch.randn(6, 4)
    assert torch.equal(proj(x), x)


def test_cache_roundtrip(tmp_path):
    class Counting(HashEmbeddingProvider):
        calls = 0

        def embed(self, words):
            Counting.calls += 1
            return super().embed(words)

    p = Counting(16)
    cache = EmbeddingCache(tmp_path)
    a = cache.get(p, ["x", "y"]).matrix
    b = cache.get(p, ["x", "y"]).matrix
    assert np.array_equal(a, b) and Counting.calls == 1


def test_bert_missing_asset(tmp_path):
    with pytest.raises(ProviderError, match="not found"):
        BertEmbeddingProvider(tmp_path / "nope", 768).embed(["a"])


@pytest.fixture(scope="module")
def tiny_bert(tmp_path_factory):
    transformers = pytest.importorskip("transformers")
    root = tmp_path_factory.mktemp("bert")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "the", "cat", "un", "##seen"]
    tok = transformers.BertTokenizerFast(vocab={w: i for i, w in enumerate(vocab)}, do_lower_case=True)
    tok.save_pretrained(root)
    cfg = transformers.BertConfig(
        vocab_size=len(vocab), hidden_size=16, num_hidden_layers=1, num_attention_heads=2, intermediate_size=32
    )
    torch.manual_seed(0)
    transformers.BertModel(cfg).save_pretrained(root)
    return root


def test_bert_mean_pools_subwords(tiny_bert):
    import transformers

    words = ["the", "unseen", "cat"]
    got = BertEmbeddingProvider(tiny_bert, 16).embed(words)
    tok = transformers.AutoTokenizer.from_pretrained(str(tiny_bert))
    model = transformers.AutoModel.from_pretrained(str(tiny_bert)).eval()
    enc = tok(words, is_split_into_words=True, return_tensors="pt")
    assert enc.input_ids[0].tolist() == [2, 5, 7, 8, 6, 3]
    with torch.no_grad():
        h = model(**enc).last_hidden_state[0].numpy()
    want = np.stack([h[1], (h[2] + h[3]) / 2, h[4]])
    np.testing.assert_allclose(got, want, rtol=1e-5, atol=1e-6)


def test_bert_width_mismatch(tiny_bert):
    with pytest.raises(ProviderError, match="hidden size"):
        BertEmbeddingProvider(tiny_bert, 768).embed(["cat"])
