#pragma once

namespace artistid {

/// Asks the C allocator to keep freed blocks instead of returning them to the
/// OS. Training allocates and frees the same large activation buffers every
/// batch; without this each one is a fresh mmap that is page-faulted in
/// again. Call once at program start. No-op outside glibc.
void retain_freed_memory();

}  // namespace artistid
