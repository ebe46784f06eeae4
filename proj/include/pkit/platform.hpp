#pragma once

namespace pkit {

// Keeps large freed blocks in the heap instead of returning them to the OS.
// Training and sampling allocate the same multi-megabyte buffers every step;
// without this each step pays fresh page faults. No-op outside glibc.
void retain_heap_memory();

}  // namespace pkit
