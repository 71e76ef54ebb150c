#pragma once

namespace crisp {

/// Keeps large freed blocks in the heap instead of returning them to the OS.
/// Every training step allocates and frees a few hundred MB of activations
/// and gradients; with glibc defaults each of those round trips through mmap
/// and the page-fault cost is about a third of the runtime. No-op elsewhere.
void tune_allocator();

}  // namespace crisp
