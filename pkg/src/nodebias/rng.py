"""SplitMix64 pseudo-random sequence.

Used for weight initialisation so that a training seed has the same meaning
in any implementation: state advances by 0x9E3779B97F4A7C15, output is the
standard SplitMix64 finaliser, and a uniform double in [0, 1) takes the top
53 bits of the output.
"""

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        return z ^ (z >> 31)

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniforms(self, count: int) -> list[float]:
        return [self.uniform() for _ in range(count)]
