import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from byzcoin_lab import groups
from byzcoin_lab.groups import ED25519, TOY


def modexp_oracle(base, exponent, modulus):
    # Independent square-and-multiply, not the library's pow path.
    result = 1
    base %= modulus
    while exponent:
        if exponent & 1:
            result = result * base % modulus
        base = base * base % modulus
        exponent >>= 1
    return result


class TestKeygen:
    def test_toy_vector(self):
        kp = groups.keypair_from_secret(TOY, 3)
        assert kp.public == bytes([modexp_oracle(2, 3, 23)])
        assert kp.public == b"\x08"

    def test_zero_secret_gives_identity(self):
        for group in (TOY, ED25519):
            assert groups.keypair_from_secret(group, 0).public == group.identity()

    def test_deterministic_for_seed(self):
        for group in (TOY, ED25519):
            assert groups.keygen(group, 7) == groups.keygen(group, 7)
            assert groups.keygen(group, 7).public == group.base_pow(groups.keygen(group, 7).secret)


class TestCommit:
    def test_toy_vector(self):
        # Find a seed whose first draw is 4, then check commitment 2^4=16.
        for seed in range(1000):
            if random.Random(seed).randrange(11) == 4:
                nonce, commitment = groups.commit(TOY, seed)
                assert nonce == 4
                assert commitment == bytes([modexp_oracle(2, 4, 23)]) == b"\x10"
                break
        else:
            pytest.fail("no seed produced nonce 4")

    def test_zero_nonce_identity(self):
        assert TOY.base_pow(0) == TOY.identity()

    def test_distinct_seeds_rarely_collide(self):
        draws = [groups.commit(TOY, seed)[0] for seed in range(200)]
        # With q=11, two fixed seeds collide 1/11 of the time; across 200
        # draws every residue must appear.
        assert set(draws) == set(range(11))


class TestChallenge:
    def test_deterministic(self):
        commitment = TOY.base_pow(5)
        assert groups.challenge(TOY, commitment, b"msg") == groups.challenge(TOY, commitment, b"msg")

    def test_message_separates(self):
        commitment = ED25519.base_pow(5)
        seen = {groups.challenge(ED25519, commitment, bytes([i])) for i in range(64)}
        assert len(seen) == 64

    def test_toy_override_hook(self):
        commitment = TOY.base_pow(5)
        assert groups.challenge(TOY, commitment, b"msg", override=5) == 5
        assert groups.challenge(TOY, commitment, b"msg", override=16) == 5
        with pytest.raises(ValueError):
            groups.challenge(ED25519, ED25519.base_pow(5), b"msg", override=5)


class TestRespond:
    def test_toy_vector(self):
        assert groups.respond(3, 4, 5, 11) == (4 + 5 * 3) % 11 == 8

    def test_zero_challenge(self):
        assert groups.respond(3, 4, 0, 11) == 4

    def test_zero_secret(self):
        assert groups.respond(0, 4, 5, 11) == 4


class TestVerify:
    def test_toy_vector(self):
        # x=3, v=4, c=5, r=8: 2^8 = 3 = 16 * 8^5 mod 23.
        assert modexp_oracle(2, 8, 23) == 3
        assert 16 * modexp_oracle(8, 5, 23) % 23 == 3
        assert groups.verify(TOY, b"\x08", b"\x10", 5, 8)

    def test_flipped_response_rejected(self):
        assert not groups.verify(TOY, b"\x08", b"\x10", 5, 9)

    def test_two_signer_aggregate_vector(self):
        # x={3,5}, v={4,6}, c=7: X^=3, V^=12, r^=0.
        agg_public = TOY.mul(TOY.base_pow(3), TOY.base_pow(5))
        agg_commit = TOY.mul(TOY.base_pow(4), TOY.base_pow(6))
        assert TOY._decode(agg_public) == modexp_oracle(2, 8, 23) == 3
        assert TOY._decode(agg_commit) == modexp_oracle(2, 10, 23) == 12
        response = (groups.respond(3, 4, 7, 11) + groups.respond(5, 6, 7, 11)) % 11
        assert response == 0
        assert 12 * modexp_oracle(3, 7, 23) % 23 == 1 == modexp_oracle(2, 0, 23)
        assert groups.verify(TOY, agg_public, agg_commit, 7, response)

    def test_malformed_element_raises(self):
        with pytest.raises(groups.DecodeError):
            groups.verify(TOY, b"\x00", b"\x10", 5, 8)
        with pytest.raises(groups.DecodeError):
            groups.verify(ED25519, b"\xff" * 32, ED25519.identity(), 5, 8)


class TestGroupProperties:
    def test_toy_completeness_exhaustive(self):
        for secret in range(11):
            for nonce in range(11):
                for c in range(11):
                    response = groups.respond(secret, nonce, c, 11)
                    assert groups.verify(
                        TOY, TOY.base_pow(secret), TOY.base_pow(nonce), c, response
                    )

    def test_toy_soundness_fraction_is_one_over_q(self):
        rng = random.Random(99)
        for _ in range(50):
            public = TOY.base_pow(rng.randrange(11))
            commitment = TOY.base_pow(rng.randrange(11))
            c = rng.randrange(11)
            passing = sum(
                groups.verify(TOY, public, commitment, c, r) for r in range(11)
            )
            assert passing == 1

    def test_toy_aggregate_homomorphism_two_signers_exhaustive(self):
        for x1 in range(11):
            for x2 in range(11):
                for v1 in range(11):
                    for v2 in range(11):
                        c = (x1 * 7 + v2 + 3) % 11  # arbitrary but exhaustive enough
                        agg_pub = TOY.mul(TOY.base_pow(x1), TOY.base_pow(x2))
                        agg_com = TOY.mul(TOY.base_pow(v1), TOY.base_pow(v2))
                        r = (v1 + v2 + c * (x1 + x2)) % 11
                        assert groups.verify(TOY, agg_pub, agg_com, c, r)

    def test_toy_aggregate_homomorphism_three_signers_sampled(self):
        rng = random.Random(4)
        for _ in range(2000):
            xs = [rng.randrange(11) for _ in range(3)]
            vs = [rng.randrange(11) for _ in range(3)]
            c = rng.randrange(11)
            agg_pub = groups.aggregate(TOY, (TOY.base_pow(x) for x in xs))
            agg_com = groups.aggregate(TOY, (TOY.base_pow(v) for v in vs))
            r = (sum(vs) + c * sum(xs)) % 11
            assert groups.verify(TOY, agg_pub, agg_com, c, r)


class TestEncodings:
    @given(st.integers(min_value=0, max_value=10))
    def test_toy_roundtrip(self, exponent):
        element = TOY.base_pow(exponent)
        assert TOY._encode(TOY._decode(element)) == element

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=ED25519.order - 1))
    def test_ed25519_roundtrip(self, exponent):
        element = ED25519.base_pow(exponent)
        assert ED25519._encode(ED25519._decode(element)) == element

    @given(st.integers(min_value=0, max_value=ED25519.order - 1))
    @settings(max_examples=30, deadline=None)
    def test_scalar_roundtrip(self, value):
        data = groups.encode_scalar(ED25519, value)
        assert len(data) == 32
        assert groups.decode_scalar(ED25519, data) == value

    def test_scalar_not_reduced_rejected(self):
        data = (TOY.order).to_bytes(1, "little")
        with pytest.raises(groups.DecodeError):
            groups.decode_scalar(TOY, data)
