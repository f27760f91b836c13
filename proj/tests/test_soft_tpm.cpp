#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "trustchain/soft_tpm.hpp"

using namespace trustchain;
using namespace trustchain::tpm;

namespace {

crypto::Digest digest_of(std::string_view s) {
    return crypto::sha256(to_bytes(s));
}

TpmState& provisioned() {
    static TpmState t = [] {
        TpmState tpm = TpmState::create();
        std::string tok = tpm.create_primary("rsa2048");
        tpm.evict_control(tok, PersistentHandle::checked(0x81000001));
        return tpm;
    }();
    return t;
}

}  // namespace

TEST_CASE("create_primary accepts only rsa2048") {
    TpmState t = TpmState::create();
    std::string tok = t.create_primary("rsa2048");
    CHECK(tok.starts_with("ctx-"));
    CHECK_THROWS_AS(t.create_primary("rsa1024"), ValidationError);
    CHECK_THROWS_AS(t.create_primary("ecc256"), ValidationError);

    // two creations give distinct key material
    std::string tok2 = t.create_primary("rsa2048");
    t.evict_control(tok, PersistentHandle::checked(0x81000001));
    t.evict_control(tok2, PersistentHandle::checked(0x81000002));
    CHECK(t.read_public(PersistentHandle::checked(0x81000001)) !=
          t.read_public(PersistentHandle::checked(0x81000002)));
}

TEST_CASE("evict_control handle range and occupancy") {
    TpmState t = TpmState::create();
    std::string tok = t.create_primary("rsa2048");

    CHECK_THROWS_AS(PersistentHandle::checked(0x80FFFFFF), ValidationError);
    CHECK_THROWS_AS(PersistentHandle::checked(0x81000100), ValidationError);
    // inclusive upper bound
    t.evict_control(tok, PersistentHandle::checked(0x810000FF));
    CHECK(t.handle_occupied(PersistentHandle::checked(0x810000FF)));

    // token is gone after persisting
    CHECK_THROWS_AS(t.evict_control(tok, PersistentHandle::checked(0x81000001)),
                    ValidationError);

    std::string tok2 = t.create_primary("rsa2048");
    CHECK_THROWS_AS(t.evict_control(tok2, PersistentHandle::checked(0x810000FF)),
                    ValidationError);  // occupied
}

TEST_CASE("persisted key survives a state round trip") {
    TpmState t = TpmState::create();
    std::string tok = t.create_primary("rsa2048");
    PersistentHandle h = PersistentHandle::checked(0x81000001);
    t.evict_control(tok, h);
    std::string pem = t.read_public(h);

    TpmState back = TpmState::deserialize(t.serialize());
    CHECK(back.read_public(h) == pem);

    Bytes ct = t.rsa_encrypt(h, to_bytes("secret"));
    CHECK(back.rsa_decrypt(h, ct) == to_bytes("secret"));
}

TEST_CASE("read_public is armored and round-trips, never leaks private bits") {
    TpmState& t = provisioned();
    PersistentHandle h = PersistentHandle::checked(0x81000001);
    std::string pem = t.read_public(h);
    CHECK(pem.starts_with("-----BEGIN PUBLIC KEY-----"));
    CHECK(pem.find("PRIVATE") == std::string::npos);
    auto parsed = crypto::RsaPublicKey::from_pem(pem);
    CHECK(parsed.to_pem() == pem);

    CHECK_THROWS_AS(t.read_public(PersistentHandle::checked(0x81000002)),
                    ValidationError);
}

TEST_CASE("rsa encrypt/decrypt through the device") {
    TpmState& t = provisioned();
    PersistentHandle h = PersistentHandle::checked(0x81000001);

    SECTION("round trip of the listing example") {
        Bytes ct = t.rsa_encrypt(h, to_bytes("secret"));
        CHECK(ct.size() == 256);
        CHECK(t.rsa_decrypt(h, ct) == to_bytes("secret"));
    }
    SECTION("32-byte session key gives 256-byte ciphertext") {
        Bytes ct = t.rsa_encrypt(h, crypto::random_bytes(32));
        CHECK(ct.size() == 256);
    }
    SECTION("oaep bound: 190 accepted, 191 rejected") {
        CHECK(t.rsa_encrypt(h, crypto::random_bytes(190)).size() == 256);
        CHECK_THROWS_AS(t.rsa_encrypt(h, crypto::random_bytes(191)),
                        ValidationError);
    }
    SECTION("public-key path is decryptable by the device") {
        Bytes ct = encrypt_with_public_pem(t.read_public(h), to_bytes("secret"));
        CHECK(t.rsa_decrypt(h, ct) == to_bytes("secret"));
    }
    SECTION("randomized encoding") {
        CHECK(t.rsa_encrypt(h, to_bytes("x")) != t.rsa_encrypt(h, to_bytes("x")));
    }
    SECTION("wrong key and tampering are indistinguishable failures") {
        Bytes ct = t.rsa_encrypt(h, to_bytes("secret"));
        TpmState other = TpmState::create();
        std::string tok = other.create_primary("rsa2048");
        other.evict_control(tok, h);
        CHECK_THROWS_AS(other.rsa_decrypt(h, ct), VerificationError);
        Bytes bad = ct;
        bad[100] ^= 1;
        CHECK_THROWS_AS(t.rsa_decrypt(h, bad), VerificationError);
    }
}

TEST_CASE("pcr extends follow the frozen hash-chain oracle") {
    TpmState t = TpmState::create();

    // reset value
    CHECK(to_hex(t.pcr_read(4)) ==
          "0000000000000000000000000000000000000000000000000000000000000000");

    // values computed independently with python hashlib
    crypto::Digest m1 = digest_of("measurement-1");
    crypto::Digest m2 = digest_of("measurement-2");
    CHECK(to_hex(m1) ==
          "3f23fec5bc9c1b260573d136a9584242371cccf05e0af006d48976a30a480432");

    crypto::Digest p1 = t.pcr_extend(4, m1);
    CHECK(to_hex(p1) ==
          "46a4a7fde00741601b6d3e47191faccaa1eb96e7ce9ede54eeb5b2136477fa8f");
    crypto::Digest p2 = t.pcr_extend(4, m2);
    CHECK(to_hex(p2) ==
          "09d43ebea87f7deda411f9d23c34261479b3a3e1830bff7462b635a88b5b1ed4");

    // order matters
    TpmState swapped = TpmState::create();
    swapped.pcr_extend(4, m2);
    CHECK(to_hex(swapped.pcr_extend(4, m1)) ==
          "bb572f60825c669ccd47b6baf0cfd0a7a8f23c1263f62d46c5bc737a9163df9f");

    CHECK_THROWS_AS(t.pcr_extend(24, m1), ValidationError);
    CHECK_THROWS_AS(t.pcr_read(24), ValidationError);
}

TEST_CASE("pcr chain equals a pure fold for random sequences") {
    std::mt19937 rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        TpmState t = TpmState::create();
        std::uint32_t index = rng() % kPcrCount;
        std::size_t len = rng() % 9;
        crypto::Digest oracle{};  // fold(H, 0^32, seq)
        for (std::size_t i = 0; i < len; ++i) {
            crypto::Digest m = digest_of("m" + std::to_string(rng()));
            t.pcr_extend(index, m);
            oracle = crypto::sha256({oracle, m});
        }
        CHECK(t.pcr_read(index) == oracle);
    }
}

TEST_CASE("seal and unseal against PCR policy") {
    TpmState t = TpmState::create();
    t.pcr_extend(7, digest_of("step"));
    PcrPolicy policy = t.policy_from_current({7});
    Bytes secret = to_bytes("the sealed session key");

    SECTION("unchanged PCRs release the secret") {
        SealedBlob blob = t.seal(secret, policy);
        CHECK(t.unseal(blob) == secret);
    }
    SECTION("an extra extend on a selected PCR blocks unsealing") {
        SealedBlob blob = t.seal(secret, policy);
        t.pcr_extend(7, digest_of("unexpected"));
        CHECK_THROWS_AS(t.unseal(blob), VerificationError);
    }
    SECTION("extends on unselected PCRs do not matter") {
        SealedBlob blob = t.seal(secret, policy);
        t.pcr_extend(8, digest_of("elsewhere"));
        CHECK(t.unseal(blob) == secret);
    }
    SECTION("zero-byte secret seals and unseals") {
        SealedBlob blob = t.seal(Bytes{}, policy);
        CHECK(t.unseal(blob).empty());
    }
    SECTION("oversize secret is rejected") {
        CHECK(t.unseal(t.seal(crypto::random_bytes(128), policy)).size() == 128);
        CHECK_THROWS_AS(t.seal(crypto::random_bytes(129), policy), ValidationError);
    }
    SECTION("tampered integrity tag refuses") {
        SealedBlob blob = t.seal(secret, policy);
        blob.integrity_tag[0] ^= 1;
        CHECK_THROWS_AS(t.unseal(blob), VerificationError);
    }
    SECTION("rewritten policy breaks the associated data") {
        SealedBlob blob = t.seal(secret, policy);
        t.pcr_extend(7, digest_of("drift"));
        blob.policy = t.policy_from_current({7});  // attacker edits the policy
        CHECK_THROWS_AS(t.unseal(blob), VerificationError);
    }
    SECTION("mismatch on one of three selected PCRs refuses") {
        t.pcr_extend(8, digest_of("a"));
        t.pcr_extend(9, digest_of("b"));
        PcrPolicy three = t.policy_from_current({7, 8, 9});
        SealedBlob blob = t.seal(secret, three);
        t.pcr_extend(8, digest_of("drift"));
        CHECK_THROWS_AS(t.unseal(blob), VerificationError);
    }
    SECTION("another device cannot unseal the blob") {
        SealedBlob blob = t.seal(secret, policy);
        TpmState other = TpmState::create();
        other.pcr_extend(7, digest_of("step"));
        CHECK_THROWS_AS(other.unseal(blob), VerificationError);
    }
    SECTION("blob encoding round trip") {
        SealedBlob blob = t.seal(secret, policy);
        CHECK(t.unseal(SealedBlob::decode(blob.encode())) == secret);
    }
}

TEST_CASE("seal/unseal sensitivity over random perturbations") {
    std::mt19937 rng(11);
    const int trials = 200;
    int changed = 0, unchanged = 0;
    int failures_when_changed = 0, successes_when_unchanged = 0;
    for (int trial = 0; trial < trials; ++trial) {
        TpmState t = TpmState::create();
        for (int i = 0; i < 3; ++i)
            t.pcr_extend(rng() % 8, digest_of("init" + std::to_string(rng())));
        std::set<std::uint32_t> selection;
        std::size_t want = 1 + rng() % 3;
        while (selection.size() < want) selection.insert(rng() % 8);
        PcrPolicy policy = t.policy_from_current(selection);
        Bytes secret = crypto::random_bytes(32);
        SealedBlob blob = t.seal(secret, policy);

        if (rng() % 2 == 0) {
            ++changed;
            std::uint32_t idx = *std::next(selection.begin(),
                                           static_cast<long>(rng() % selection.size()));
            t.pcr_extend(idx, digest_of("perturb" + std::to_string(rng())));
            try {
                t.unseal(blob);
            } catch (const VerificationError&) {
                ++failures_when_changed;
            }
        } else {
            ++unchanged;
            std::uint32_t idx = 8 + rng() % (kPcrCount - 8);  // outside selection
            t.pcr_extend(idx, digest_of("noise" + std::to_string(rng())));
            if (t.unseal(blob) == secret) ++successes_when_unchanged;
        }
    }
    // 100% refusal when a selected PCR changed, 0% otherwise
    CHECK(failures_when_changed == changed);
    CHECK(successes_when_unchanged == unchanged);
}

TEST_CASE("quotes bind the nonce and the selected registers") {
    TpmState t = TpmState::create();
    t.pcr_extend(4, digest_of("ipxe"));
    t.pcr_extend(8, digest_of("kernel"));

    Bytes nonce = crypto::random_bytes(16);
    Quote q = t.attest_quote({4, 8}, nonce);
    auto pub = crypto::RsaPublicKey::from_pem(t.quote_public_pem());
    CHECK(verify_quote(q, pub));

    // verifier recomputes the digest from pcr_read
    std::map<std::uint32_t, crypto::Digest> values{{4, t.pcr_read(4)},
                                                   {8, t.pcr_read(8)}};
    CHECK(q.pcr_digest == quote_digest(values));

    // stale quote does not verify with a different expected nonce
    Quote replayed = q;
    replayed.nonce = crypto::random_bytes(16);
    CHECK_FALSE(verify_quote(replayed, pub));

    CHECK_THROWS_AS(t.attest_quote({}, nonce), ValidationError);

    Quote back = Quote::decode(q.encode());
    CHECK(verify_quote(back, pub));
}

TEST_CASE("serialized state never contains private material in the clear") {
    TpmState t = TpmState::create();
    std::string tok = t.create_primary("rsa2048");
    PersistentHandle h = PersistentHandle::checked(0x81000001);
    t.evict_control(tok, h);
    t.pcr_extend(4, digest_of("x"));
    Bytes secret = to_bytes("super secret payload 123");
    SealedBlob blob = t.seal(secret, t.policy_from_current({4}));

    Bytes state = t.serialize();
    std::string state_str(state.begin(), state.end());

    // reload and pull the actual private exponent to scan for
    TpmState back = TpmState::deserialize(state);
    Bytes ct = back.rsa_encrypt(h, to_bytes("probe"));
    CHECK(back.rsa_decrypt(h, ct) == to_bytes("probe"));

    // the PEM body of any private key must not appear in the state file
    CHECK(state_str.find("PRIVATE KEY") == std::string::npos);

    // neither must the sealed secret appear in blob or state
    std::string blob_str(blob.ciphertext.begin(), blob.ciphertext.end());
    CHECK(blob_str.find("super secret") == std::string::npos);
    CHECK(state_str.find("super secret") == std::string::npos);
}

TEST_CASE("handle text parsing") {
    CHECK(PersistentHandle::parse("0x81000001").value == 0x81000001);
    CHECK(PersistentHandle::parse("0x810000FF").value == 0x810000FF);
    CHECK_THROWS_AS(PersistentHandle::parse("0x91000001"), ValidationError);
    CHECK_THROWS_AS(PersistentHandle::parse("junk"), std::exception);
    CHECK(PersistentHandle::checked(0x81000001).str() == "0x81000001");
}
