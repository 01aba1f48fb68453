#include <gtest/gtest.h>

#include <sstream>

#include "pda/book.hpp"

using namespace pda;

namespace {

Order ask(Price p, Qty q) { return Order{kWholesaleSupplier, Side::Ask, p, q, 0}; }
Order buy(Price p, Qty q, ParticipantId owner = 1) { return Order{owner, Side::Buy, p, q, 0}; }

}  // namespace

TEST(NormalizeBook, SortsAsksAscending) {
  const std::vector<Order> raw{ask(20, 5), ask(10, 5)};
  const CombinedBook book = normalize_book(raw);
  ASSERT_EQ(book.supply_side.size(), 2u);
  EXPECT_EQ(book.supply_side[0].price, 10);
  EXPECT_EQ(book.supply_side[1].price, 20);
}

TEST(NormalizeBook, EqualPriceBuysLargerQuantityFirst) {
  const std::vector<Order> raw{buy(30, 2), buy(30, 7, 2)};
  const CombinedBook book = normalize_book(raw);
  ASSERT_EQ(book.demand_side.size(), 2u);
  EXPECT_EQ(book.demand_side[0].quantity, 7);
  EXPECT_EQ(book.demand_side[1].quantity, 2);
}

TEST(NormalizeBook, EmptyInput) {
  EXPECT_TRUE(normalize_book(std::vector<Order>{}).empty());
}

TEST(NormalizeBook, TagsFollowPriorityAndIgnoreInputOrder) {
  std::vector<Order> raw{buy(30, 2), ask(10, 3), Order{2, Side::SellBid, 10, 3, 99}, buy(40, 1, 3), ask(5, 1)};
  const CombinedBook a = normalize_book(raw);
  std::reverse(raw.begin(), raw.end());
  const CombinedBook b = normalize_book(raw);
  EXPECT_EQ(a.supply_side, b.supply_side);
  EXPECT_EQ(a.demand_side, b.demand_side);
  for (std::size_t i = 0; i < a.supply_side.size(); ++i) EXPECT_EQ(a.supply_side[i].tag, i);
  EXPECT_EQ(a.demand_side.front().tag, a.supply_side.size());
  // sell bid ranks before an ask of equal price and quantity
  EXPECT_EQ(a.supply_side[1].side, Side::SellBid);
}

TEST(NormalizeBook, RejectsBadOrders) {
  EXPECT_THROW(normalize_book(std::vector<Order>{ask(10, 0)}), InvalidInput);
  EXPECT_THROW(normalize_book(std::vector<Order>{ask(-1, 2)}), InvalidInput);
  EXPECT_THROW(normalize_book(std::vector<Order>{buy(101, 2)}), InvalidInput);
  BookLimits limits;
  limits.q_max = 4;
  EXPECT_THROW(normalize_book(std::vector<Order>{ask(10, 5)}, limits), InvalidInput);
}

TEST(OrderText, RoundTripAtResolution) {
  const Resolution res(0.001);
  const std::vector<Order> orders{Order{0, Side::Ask, 12.5, 1500, 0}, Order{2, Side::Buy, 40, 7, 0},
                                  Order{1, Side::SellBid, 0.25, 123456, 0}};
  std::stringstream ss;
  write_orders(ss, orders, res);
  const std::vector<Order> back = read_orders(ss, res);
  ASSERT_EQ(back.size(), orders.size());
  for (std::size_t i = 0; i < orders.size(); ++i) {
    EXPECT_EQ(back[i].side, orders[i].side);
    EXPECT_EQ(back[i].price, orders[i].price);
    EXPECT_EQ(back[i].quantity, orders[i].quantity);
    EXPECT_EQ(back[i].owner, orders[i].owner);
  }
}

TEST(OrderText, ReportsLineOfBadInput) {
  std::stringstream ss("# header\nask 10 2 0\nbid 3 1 1\n");
  try {
    read_orders(ss, Resolution(1.0));
    FAIL() << "expected InvalidInput";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
  }
}
