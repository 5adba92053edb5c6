#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace flsim {

inline constexpr std::uint32_t kMss = 1448;
/// IPv4 + TCP with timestamps; MSS + header = 1500-byte Ethernet MTU.
inline constexpr std::uint32_t kHeaderBytes = 52;

enum class SegmentKind : std::uint8_t { Syn, SynAck, Ack, Data, KeepaliveProbe, ProbeAck, Rst };

std::string_view to_string(SegmentKind kind) noexcept;

struct SackBlock {
    std::uint64_t begin = 0;
    std::uint64_t end = 0;  // exclusive
};

inline constexpr std::size_t kMaxSackBlocks = 4;

struct Segment {
    SegmentKind kind = SegmentKind::Ack;
    /// Distinguishes successive connections between the same endpoints.
    std::uint32_t conn_id = 0;
    std::uint64_t seq = 0;
    std::uint64_t ack = 0;
    std::uint32_t window = 0;
    /// Timestamp option: sender clock, and the echoed clock of the segment
    /// being acknowledged (negative when there is nothing to echo).
    double ts_val = 0.0;
    double ts_ecr = -1.0;
    std::vector<SackBlock> sack;
    std::vector<std::uint8_t> payload;

    std::uint32_t wire_bytes() const noexcept {
        return kHeaderBytes + static_cast<std::uint32_t>(payload.size());
    }
};

}  // namespace flsim
