#pragma once

#include <stdexcept>
#include <string>

namespace geoverlay {

enum class Errc {
  InvalidCoordinate,
  InvalidRect,
  InvalidRegion,
  InvalidRadius,
  InvalidZoneId,
  InvalidPolicy,
  DegenerateCluster,
  NotALeaf,
  NoSplitNeeded,
  AboveThreshold,
  NoLeafSibling,
  UnknownPeer,
  DuplicatePeer,
  UnknownZone,
  StaleUpdate,
  NoMatch,
  NoSuchPeer,
  EmptyNetwork,
  NotLeader,
  PartnerBusy,
  BootstrapUnreachable,
  ParseError,
  ScenarioParseError,
  Inconsistent,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::InvalidCoordinate: return "InvalidCoordinate";
    case Errc::InvalidRect: return "InvalidRect";
    case Errc::InvalidRegion: return "InvalidRegion";
    case Errc::InvalidRadius: return "InvalidRadius";
    case Errc::InvalidZoneId: return "InvalidZoneId";
    case Errc::InvalidPolicy: return "InvalidPolicy";
    case Errc::DegenerateCluster: return "DegenerateCluster";
    case Errc::NotALeaf: return "NotALeaf";
    case Errc::NoSplitNeeded: return "NoSplitNeeded";
    case Errc::AboveThreshold: return "AboveThreshold";
    case Errc::NoLeafSibling: return "NoLeafSibling";
    case Errc::UnknownPeer: return "UnknownPeer";
    case Errc::DuplicatePeer: return "DuplicatePeer";
    case Errc::UnknownZone: return "UnknownZone";
    case Errc::StaleUpdate: return "StaleUpdate";
    case Errc::NoMatch: return "NoMatch";
    case Errc::NoSuchPeer: return "NoSuchPeer";
    case Errc::EmptyNetwork: return "EmptyNetwork";
    case Errc::NotLeader: return "NotLeader";
    case Errc::PartnerBusy: return "PartnerBusy";
    case Errc::BootstrapUnreachable: return "BootstrapUnreachable";
    case Errc::ParseError: return "ParseError";
    case Errc::ScenarioParseError: return "ScenarioParseError";
    case Errc::Inconsistent: return "Inconsistent";
  }
  return "Unknown";
}

// Every failure in the library surfaces as this exception; callers branch on code().
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace geoverlay
