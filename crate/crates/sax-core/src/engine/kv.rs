//! Block-granular KV cache bookkeeping: residency, pinning, prefix lookup,
//! and LRU eviction with tail-first contiguity per owner.
//!
//! A sequence's token stream is `[shared system prefix][its own tokens]`.
//! Shared-prefix blocks live in one chain reused by every request; each
//! request's own tokens form a private chain. Residency is tracked as a
//! contiguous block-count per chain, so "block i resident implies block
//! i-1 resident" holds by construction, and whole chains carry one
//! last-use stamp because every running iteration touches all of a
//! sequence's blocks together.

use std::collections::BTreeMap;

use crate::error::{Result, SaxError};

/// Not enough unpinned capacity to satisfy a block reservation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CapacityExhausted;

#[derive(Debug, Clone)]
struct OwnChain {
    /// Resident blocks, counted from the chain start (may include a
    /// partial tail block while the owner is running).
    resident: u64,
    last_use: f64,
    /// Set while the owning sequence is admitted; pinned blocks never
    /// leave the cache.
    pinned: bool,
}

#[derive(Debug, Clone)]
pub struct KvCacheModel {
    block_size: u32,
    capacity: u64,
    enabled: bool,
    shared_prefix_len: u32,
    shared_blocks: u64,
    shared_resident: u64,
    shared_last_use: f64,
    shared_pins: u64,
    own: BTreeMap<u64, OwnChain>,
}

fn blocks_total(tokens: u32, block_size: u32) -> u64 {
    (tokens as u64).div_ceil(block_size as u64)
}

fn blocks_whole(tokens: u32, block_size: u32) -> u64 {
    tokens as u64 / block_size as u64
}

impl KvCacheModel {
    pub fn new(capacity: u64, block_size: u32, shared_prefix_len: u32, enabled: bool) -> Result<Self> {
        if block_size == 0 {
            return Err(SaxError::config("block_size must be positive"));
        }
        if capacity == 0 {
            return Err(SaxError::config("kv capacity must be positive"));
        }
        if !(shared_prefix_len as u64).is_multiple_of(block_size as u64) {
            return Err(SaxError::config(
                "shared_prefix_len must be a whole number of blocks",
            ));
        }
        let shared_blocks = shared_prefix_len as u64 / block_size as u64;
        if shared_blocks >= capacity {
            return Err(SaxError::config(
                "kv capacity must exceed the shared prefix footprint",
            ));
        }
        Ok(KvCacheModel {
            block_size,
            capacity,
            enabled,
            shared_prefix_len,
            shared_blocks,
            shared_resident: 0,
            shared_last_use: 0.0,
            shared_pins: 0,
            own: BTreeMap::new(),
        })
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn block_size(&self) -> u32 {
        self.block_size
    }

    pub fn used_blocks(&self) -> u64 {
        self.shared_resident + self.own.values().map(|c| c.resident).sum::<u64>()
    }

    pub fn shared_resident_blocks(&self) -> u64 {
        self.shared_resident
    }

    pub fn own_resident_blocks(&self, id: u64) -> u64 {
        self.own.get(&id).map_or(0, |c| c.resident)
    }

    /// Tokens of `context_len` that belong to the request's own chain.
    fn own_tokens(&self, context_len: u32) -> u32 {
        if self.enabled {
            debug_assert!(context_len >= self.shared_prefix_len);
            context_len - self.shared_prefix_len
        } else {
            context_len
        }
    }

    /// Longest resident contiguous whole-block prefix, in tokens. Does not
    /// pin anything.
    pub fn peek_cached_len(&self, id: u64, context_len: u32) -> u32 {
        if !self.enabled {
            return 0;
        }
        if self.shared_resident < self.shared_blocks {
            return (self.shared_resident * self.block_size as u64) as u32;
        }
        let own_whole = blocks_whole(self.own_tokens(context_len), self.block_size);
        let matched = self.own_resident_blocks(id).min(own_whole);
        self.shared_prefix_len + (matched * self.block_size as u64) as u32
    }

    /// Prefix lookup for a sequence about to be admitted: returns the
    /// cached length and pins the sequence's chain plus the shared prefix.
    pub fn lookup_and_pin(&mut self, id: u64, context_len: u32) -> u32 {
        let cached = self.peek_cached_len(id, context_len);
        let chain = self.own.entry(id).or_insert(OwnChain {
            resident: 0,
            last_use: 0.0,
            pinned: false,
        });
        debug_assert!(!chain.pinned, "double pin of one owner");
        chain.pinned = true;
        if self.enabled {
            self.shared_pins += 1;
        }
        cached
    }

    /// Rolls back [`Self::lookup_and_pin`] for a sequence that could not be
    /// admitted after all.
    pub fn unpin(&mut self, id: u64) {
        if let Some(chain) = self.own.get_mut(&id) {
            debug_assert!(chain.pinned);
            chain.pinned = false;
            if chain.resident == 0 {
                self.own.remove(&id);
            }
        }
        if self.enabled {
            self.shared_pins -= 1;
        }
    }

    fn evictable_blocks(&self) -> u64 {
        let own: u64 = self
            .own
            .values()
            .filter(|c| !c.pinned)
            .map(|c| c.resident)
            .sum();
        let shared = if self.shared_pins == 0 { self.shared_resident } else { 0 };
        own + shared
    }

    /// Frees up to `blocks_needed` unpinned blocks: least recently used
    /// owners first, highest block indices first within an owner, the
    /// shared prefix last among equals. Returns the number evicted, which
    /// is short of the request only when pins block further eviction.
    pub fn evict_lru(&mut self, blocks_needed: u64) -> u64 {
        if blocks_needed == 0 {
            return 0;
        }
        // (last_use, shared-sorts-last flag, id) for every evictable chain.
        let mut order: Vec<(f64, u8, u64)> = self
            .own
            .iter()
            .filter(|(_, c)| !c.pinned && c.resident > 0)
            .map(|(id, c)| (c.last_use, 0u8, *id))
            .collect();
        if self.shared_pins == 0 && self.shared_resident > 0 {
            order.push((self.shared_last_use, 1, u64::MAX));
        }
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut evicted = 0;
        for (_, is_shared, id) in order {
            if evicted >= blocks_needed {
                break;
            }
            let want = blocks_needed - evicted;
            if is_shared == 1 {
                let take = want.min(self.shared_resident);
                self.shared_resident -= take;
                evicted += take;
            } else {
                let chain = self.own.get_mut(&id).expect("listed owner");
                let take = want.min(chain.resident);
                chain.resident -= take;
                evicted += take;
                if chain.resident == 0 {
                    self.own.remove(&id);
                }
            }
        }
        evicted
    }

    /// Makes room for `need` new blocks, evicting if free space is short.
    /// Fails without evicting when pins make the target unreachable.
    fn reserve(&mut self, need: u64) -> std::result::Result<u64, CapacityExhausted> {
        let free = self.capacity - self.used_blocks();
        if need <= free {
            return Ok(0);
        }
        let shortfall = need - free;
        if self.evictable_blocks() < shortfall {
            return Err(CapacityExhausted);
        }
        let evicted = self.evict_lru(shortfall);
        debug_assert_eq!(evicted, shortfall);
        Ok(evicted)
    }

    /// Brings a pinned sequence to full residency for a prefill: the whole
    /// shared prefix plus every own block covering `context_len` (partial
    /// tail included). Err means insufficient unpinned capacity; the
    /// caller unpins and skips the sequence.
    pub fn allocate_admission(
        &mut self,
        id: u64,
        context_len: u32,
        now: f64,
    ) -> std::result::Result<u64, CapacityExhausted> {
        let target_shared = if self.enabled { self.shared_blocks } else { 0 };
        let target_own = blocks_total(self.own_tokens(context_len), self.block_size);
        let have_own = self.own_resident_blocks(id);
        debug_assert!(have_own <= target_own, "chain exceeds its context");
        let need = (target_shared - self.shared_resident) + (target_own - have_own);
        let evicted = self.reserve(need)?;
        if self.enabled {
            self.shared_resident = target_shared;
            self.shared_last_use = now;
        }
        let chain = self.own.get_mut(&id).expect("pinned before allocation");
        chain.resident = target_own;
        chain.last_use = now;
        Ok(evicted)
    }

    /// Grows a running sequence's chain to cover `new_context_len` after a
    /// decoded token. Err means the decoder must be preempted.
    pub fn allocate_growth(
        &mut self,
        id: u64,
        new_context_len: u32,
        now: f64,
    ) -> std::result::Result<u64, CapacityExhausted> {
        let target_own = blocks_total(self.own_tokens(new_context_len), self.block_size);
        let have = self.own_resident_blocks(id);
        if target_own <= have {
            return Ok(0);
        }
        let evicted = self.reserve(target_own - have)?;
        let chain = self.own.get_mut(&id).expect("running owner");
        chain.resident = target_own;
        chain.last_use = now;
        Ok(evicted)
    }

    /// Marks a sequence's blocks (and the shared prefix) used at `now`.
    pub fn touch(&mut self, id: u64, now: f64) {
        if let Some(chain) = self.own.get_mut(&id) {
            chain.last_use = now;
        }
        if self.enabled && self.shared_resident > 0 {
            self.shared_last_use = now;
        }
    }

    /// A sequence leaves the running set but may return (retrieval or
    /// preemption): unpin, drop the never-reusable partial tail block, and
    /// leave whole blocks cached. With the prefix cache disabled nothing
    /// is retained.
    pub fn release(&mut self, id: u64, context_len: u32) {
        let whole = blocks_whole(self.own_tokens(context_len), self.block_size);
        if let Some(chain) = self.own.get_mut(&id) {
            if chain.pinned {
                chain.pinned = false;
                if self.enabled {
                    self.shared_pins -= 1;
                }
            }
            if self.enabled {
                chain.resident = chain.resident.min(whole);
                if chain.resident == 0 {
                    self.own.remove(&id);
                }
            } else {
                self.own.remove(&id);
            }
        }
    }

    /// A sequence finished for good: free everything it owns.
    pub fn free_all(&mut self, id: u64) {
        if let Some(chain) = self.own.remove(&id) {
            if chain.pinned && self.enabled {
                self.shared_pins -= 1;
            }
        }
    }
}
