//! Context hashing.
//!
//! `ctx_hash` is 64-bit FNV-1a over the UTF-8 bytes of the rendered
//! context (offset basis `0xcbf29ce484222325`, prime `0x100000001b3`).
//! Test vectors:
//!
//! | input      | hash                 |
//! |------------|----------------------|
//! | `""`       | `0xcbf29ce484222325` |
//! | `"a"`      | `0xaf63dc4c8601ec8c` |
//! | `"foobar"` | `0x85944171f73967e8` |

use std::hash::Hasher;

use fnv::FnvHasher;

use crate::padr::UserContext;

pub const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;

pub fn hash_bytes(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn ctx_hash(ctx: &UserContext) -> u64 {
    hash_bytes(ctx.rendered.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_vectors() {
        assert_eq!(hash_bytes(b""), FNV_OFFSET_BASIS);
        assert_eq!(hash_bytes(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(hash_bytes(b"foobar"), 0x85944171f73967e8);
    }
}
