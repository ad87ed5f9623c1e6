#pragma once

#include <cstddef>
#include <new>
#include <vector>

namespace iseg {

/// Cache-line aligned allocation. Vectorized reductions peel a head whose length
/// depends on the buffer address, so a fixed alignment keeps the floating-point
/// summation order, and with it every result, independent of where memory lands.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t kAlign{64};

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using AlignedBuffer = std::vector<double, AlignedAllocator<double>>;

/// Keeps tensor-sized blocks on the heap instead of fresh mappings. With the glibc
/// defaults every buffer above 128 KiB is mapped and unmapped per call, and the
/// page faults then dominate small forward passes. No-op on other allocators.
void configure_allocator();

} // namespace iseg
