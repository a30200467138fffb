// SPDX-License-Identifier: Apache-2.0

//! `X-Hub-Signature-256` verification.

use hmac::{Hmac, KeyInit, Mac};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

const PREFIX: &str = "sha256=";

fn mac(secret: &[u8], body: &[u8]) -> HmacSha256 {
    let mut mac = HmacSha256::new_from_slice(secret).expect("HMAC accepts keys of any length");
    mac.update(body);
    mac
}

/// Header value for `body` under `secret`.
pub fn sign(body: &[u8], secret: &[u8]) -> String {
    format!("{PREFIX}{}", hex::encode(mac(secret, body).finalize().into_bytes()))
}

/// True iff `header` is `"sha256="` followed by the lowercase hex
/// HMAC-SHA256 of `body`. The digest comparison is constant time.
pub fn verify_signature(body: &[u8], header: &str, secret: &[u8]) -> bool {
    let Some(hex_digest) = header.strip_prefix(PREFIX) else {
        return false;
    };
    if hex_digest.len() != 64 || !hex_digest.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return false;
    }
    let Ok(digest) = hex::decode(hex_digest) else {
        return false;
    };
    mac(secret, body).verify_slice(&digest).is_ok()
}
