"""Independent reference implementations the tests compare against.

None of these share code with the package: they are the slow, obvious
versions of the same computations.
"""

import ipaddress

import numpy as np


def brute_quantile(values, q):
    """Order statistic by counting, then linear interpolation at h = q(n-1)."""
    n = len(values)

    def kth(k):
        # the k-th smallest (0-based): the value with <= k smaller and > k not-larger
        for v in values:
            smaller = sum(1 for w in values if w < v)
            not_larger = sum(1 for w in values if w <= v)
            if smaller <= k < not_larger:
                return v
        raise AssertionError("unreachable")

    h = q * (n - 1)
    lo = int(h)
    if lo == h:
        return kth(lo)
    a, b = kth(lo), kth(lo + 1)
    return a + (h - lo) * (b - a)


def linear_scan(entries, address):
    """Longest matching prefix by checking every entry; ``None`` if none match."""
    address = ipaddress.ip_address(address)
    best, best_len = None, -1
    for prefix, origin in entries.items():
        if prefix.version == address.version and address in prefix \
                and prefix.prefixlen > best_len:
            best, best_len = origin, prefix.prefixlen
    return best


def numpy_lookup_table(entries):
    """IPv4 entries as parallel arrays (network, mask, length, origin)."""
    nets = [p for p in entries if p.version == 4]
    net = np.array([int(p.network_address) for p in nets], dtype=np.uint64)
    mask = np.array([int(p.netmask) for p in nets], dtype=np.uint64)
    length = np.array([p.prefixlen for p in nets], dtype=np.int64)
    origin = np.array([entries[p] for p in nets], dtype=np.int64)
    return net, mask, length, origin


def linear_scan_v4(table, addresses):
    """Vectorised linear scan: every address is tested against every entry."""
    net, mask, length, origin = table
    out = []
    for a in addresses:
        hit = (np.uint64(int(a)) & mask) == net
        if not hit.any():
            out.append(None)
            continue
        lengths = np.where(hit, length, -1)
        out.append(int(origin[int(np.argmax(lengths))]))
    return out
