// Generates the bundled packet log and price file.  The log is laid out as
// 15 half-day blocks of 2160 twenty-second slots: blocks 0-9 carry the
// large-packet (DTJ) streams of ten job classes with diurnal volume, blocks
// 10-14 carry small-packet (DSJ) streams with staggered near-capacity
// plateaus so best-effort service starves at the origins while shifting
// controllers escape.  Packet sizes avoid the classification thresholds
// {10, 50, 100, 150} Mbit so byte rounding never flips a class.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "troughfill/common.hpp"

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kSlotLen = 20.0;
constexpr long kSlotsPerBlock = 2160;  // 12 h
constexpr int kDtjBlocks = 10;
constexpr int kDsjBlocks = 5;

// Byte-mass split across the size bins; the share of mass above a threshold
// of 10 / 50 / 100 / 150 Mbit is 90 / 70 / 50 / 10 percent.
constexpr double kMassWeight[5] = {0.10, 0.20, 0.20, 0.40, 0.10};
constexpr double kBinLo[5] = {1.0, 10.5, 50.5, 100.5, 150.5};
constexpr double kBinHi[5] = {9.9, 49.9, 99.9, 149.9, 300.0};

struct Packet {
  double ts;
  double mbit;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deterministic sample data generator (packet log + prices)"};
  std::string out_dir = "data";
  std::uint64_t seed = 7;
  app.add_option("--out-dir", out_dir, "output directory");
  app.add_option("--seed", seed, "generator seed");
  CLI11_PARSE(app, argc, argv);

  std::vector<Packet> packets;
  packets.reserve(80000);

  for (int b = 0; b < kDtjBlocks; ++b) {
    tf::Rng rng(tf::substream_seed(seed, "dtj-block", b));
    const double t0 = b * kSlotsPerBlock * kSlotLen;
    const double base = 24.0 + 2.0 * b;  // Mbit per slot
    const double phase = 2.0 * kPi * b / kDtjBlocks;
    double target[5] = {};
    double realized[5] = {};
    for (long t = 0; t < kSlotsPerBlock; ++t) {
      double vol = base * (1.0 + 0.5 * std::sin(2.0 * kPi * t / kSlotsPerBlock +
                                                phase));
      // Fill each bin to its byte-mass share directly; drawing bins by weight
      // would put the weight on packet counts instead.
      for (int bin = 0; bin < 5; ++bin) {
        target[bin] += vol * kMassWeight[bin];
        while (realized[bin] < target[bin]) {
          double size = rng.uniform(kBinLo[bin], kBinHi[bin]);
          packets.push_back({t0 + (t + rng.uniform01()) * kSlotLen, size});
          realized[bin] += size;
        }
      }
    }
  }

  for (int b = 0; b < kDsjBlocks; ++b) {
    tf::Rng rng(tf::substream_seed(seed, "dsj-block", b));
    const double t0 = (kDtjBlocks + b) * kSlotsPerBlock * kSlotLen;
    for (long t = 0; t < kSlotsPerBlock; ++t) {
      double demand = 6.0 + 1.5 * std::sin(2.0 * kPi * t / 720.0 + b);
      long p = (t + 432L * b) % kSlotsPerBlock;  // stagger plateaus per IDC
      if ((p >= 300 && p < 700) || (p >= 1400 && p < 1800)) {
        demand = 33.0 + 4.0 * std::sin(2.0 * kPi * p / 200.0);
      }
      double realized = 0.0;
      while (realized < demand) {
        double size = rng.uniform(0.5, 8.0);
        packets.push_back({t0 + (t + rng.uniform01()) * kSlotLen, size});
        realized += size;
      }
    }
  }

  std::sort(packets.begin(), packets.end(), [](const Packet& a, const Packet& b) {
    return a.ts < b.ts || (a.ts == b.ts && a.mbit < b.mbit);
  });

  std::filesystem::create_directories(out_dir);
  {
    std::ofstream out(out_dir + "/packets.csv", std::ios::trunc);
    if (!out) {
      std::fprintf(stderr, "cannot write %s/packets.csv\n", out_dir.c_str());
      return 2;
    }
    out << "timestamp_s,size_bytes\n";
    char buf[64];
    for (const Packet& p : packets) {
      std::snprintf(buf, sizeof buf, "%.3f,%lld\n", p.ts,
                    static_cast<long long>(std::llround(p.mbit * 125000.0)));
      out << buf;
    }
  }

  {
    std::ofstream out(out_dir + "/prices.csv", std::ios::trunc);
    if (!out) {
      std::fprintf(stderr, "cannot write %s/prices.csv\n", out_dir.c_str());
      return 2;
    }
    out << "region,hour,price\n";
    char buf[64];
    for (int r = 0; r < kDsjBlocks; ++r) {
      for (int h = 0; h < 24; ++h) {
        double price =
            2.0 + 3.0 * (1.0 + std::sin(2.0 * kPi * (h - 6 - 3 * r) / 24.0));
        std::snprintf(buf, sizeof buf, "r%d,%d,%.4f\n", r, h, price);
        out << buf;
      }
    }
  }

  std::printf("wrote %s/packets.csv (%zu packets) and %s/prices.csv\n",
              out_dir.c_str(), packets.size(), out_dir.c_str());
  return 0;
}
