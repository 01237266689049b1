"""Cache page sizing and alignment."""

MIN_PAGE = 4 * 1024
MAX_PAGE = 4 * 1024 * 1024
RANDOM_PAGE = 16 * 1024

SEQUENTIAL, RANDOM = "sequential", "random"


def _next_pow2(n):
    p = 1
    while p < n:
        p <<= 1
    return p


def page_size_for(file_size, access=SEQUENTIAL):
    """Small pages for random access, about 64 pages per file for streaming."""
    if access == RANDOM:
        return RANDOM_PAGE
    return max(MIN_PAGE, min(MAX_PAGE, _next_pow2(-(-int(file_size) // 64))))


def covering_pages(offset, length, page_size, file_size):
    """Aligned ``[(page_offset, page_length)]`` covering ``[offset, offset+length)``."""
    end = min(offset + length, file_size)
    if end <= offset:
        return []
    first = offset - offset % page_size
    return [(p, min(page_size, file_size - p)) for p in range(first, end, page_size)]
